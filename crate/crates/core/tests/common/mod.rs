#![allow(dead_code)]

pub mod oracle;
pub mod vectors;
pub mod wire_gen;
