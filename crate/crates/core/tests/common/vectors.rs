//! Frozen derivation vectors, recomputed both by the reference oracle and
//! by the library.

use serde_json::Value;
use tilesim_core::crypto::*;

use super::oracle::hmac_sha256;

pub const VECTORS: &str = include_str!("../vectors/crypto_vectors.json");

fn hexin(rec: &Value, name: &str) -> Vec<u8> {
    hex::decode(rec["inputs"][name].as_str().unwrap()).unwrap()
}

fn num(rec: &Value, name: &str) -> u64 {
    rec["inputs"][name].as_u64().unwrap()
}

fn pad(bytes: &[u8], n: usize) -> Vec<u8> {
    let mut v = bytes.to_vec();
    v.resize(n, 0);
    v
}

/// Recomputes a vector with the reference HMAC and hand-written layouts.
pub fn oracle(rec: &Value) -> Vec<u8> {
    let h = |name: &str| hexin(rec, name);
    match rec["derivation"].as_str().unwrap() {
        "sres_activation" => {
            let msg = [h("rand_a"), h("rand_t"), h("tile_id")].concat();
            hmac_sha256(&h("key"), &msg)[4..8].to_vec()
        }
        "auth_key" => hmac_sha256(&h("key"), &h("sres_t"))[..16].to_vec(),
        "sres_session" => {
            let msg = [pad(&h("rand_a"), 16), pad(&h("rand_t"), 16)].concat();
            hmac_sha256(&h("key"), &msg)[4..8].to_vec()
        }
        "private_id_seed" => {
            let msg = pad(&[h("tile_id"), b"identity".to_vec()].concat(), 32);
            hmac_sha256(&h("key"), &msg).to_vec()
        }
        "private_id" => {
            let ctr = num(rec, "ctr") as u32;
            hmac_sha256(&h("seed"), &ctr.to_le_bytes())[..8].to_vec()
        }
        "private_id_at" => {
            let ctr = ((num(rec, "now") - num(rec, "activation")) / 900 % 8640) as u32;
            let seed = hmac_sha256(&h("key"), &pad(&[h("tile_id"), b"identity".to_vec()].concat(), 32));
            hmac_sha256(&seed, &ctr.to_le_bytes())[..8].to_vec()
        }
        "tag_key" => {
            let msg = [h("rand_a"), h("channel_data"), h("channel_prefix"), h("toa_token")].concat();
            hmac_sha256(&h("key"), &msg)[..16].to_vec()
        }
        "message_mac" => {
            let msg = h("msg");
            let ctr = num(rec, "ctr_a") as u16;
            let seed = [ctr.to_le_bytes().to_vec(), vec![1, msg.len() as u8], msg].concat();
            hmac_sha256(&h("key"), &seed)[..4].to_vec()
        }
        "tile_id_from_mac" => [h("mac"), vec![0, 1]].concat(),
        other => panic!("unknown derivation {other}"),
    }
}

/// Runs the library derivation named by the record.
pub fn library(rec: &Value) -> Vec<u8> {
    let h = |name: &str| hexin(rec, name);
    match rec["derivation"].as_str().unwrap() {
        "sres_activation" => derive_sres_activation(
            &InterimAuthKey::from_slice(&h("key")).unwrap(),
            &RandA::from_slice(&h("rand_a")).unwrap(),
            &RandT::from_slice(&h("rand_t")).unwrap(),
            &TileId::from_slice(&h("tile_id")).unwrap(),
        )
        .0
        .to_vec(),
        "auth_key" => derive_auth_key(
            &InterimAuthKey::from_slice(&h("key")).unwrap(),
            &SresT::from_slice(&h("sres_t")).unwrap(),
        )
        .0
        .to_vec(),
        "sres_session" => derive_sres_session(
            &AuthKey::from_slice(&h("key")).unwrap(),
            &RandA::from_slice(&h("rand_a")).unwrap(),
            &RandT::from_slice(&h("rand_t")).unwrap(),
        )
        .0
        .to_vec(),
        "private_id_seed" => derive_private_id_seed(
            &AuthKey::from_slice(&h("key")).unwrap(),
            &TileId::from_slice(&h("tile_id")).unwrap(),
        )
        .0
        .to_vec(),
        "private_id" => private_id(&PrivateIdSeed::from_slice(&h("seed")).unwrap(), num(rec, "ctr") as u32)
            .unwrap()
            .0
            .to_vec(),
        "private_id_at" => private_id_at(
            &AuthKey::from_slice(&h("key")).unwrap(),
            &TileId::from_slice(&h("tile_id")).unwrap(),
            num(rec, "activation"),
            num(rec, "now"),
        )
        .unwrap()
        .0
        .to_vec(),
        "tag_key" => derive_tag_key(
            &AuthKey::from_slice(&h("key")).unwrap(),
            &RandA::from_slice(&h("rand_a")).unwrap(),
            &h("channel_data"),
            &h("channel_prefix"),
            &ToaToken::from_slice(&h("toa_token")).unwrap(),
            ChannelLayout::default(),
        )
        .unwrap()
        .0
        .to_vec(),
        "message_mac" => mac_message(
            &TagKey::from_slice(&h("key")).unwrap(),
            num(rec, "ctr_a") as u16,
            &h("msg"),
        )
        .unwrap()
        .bytes
        .to_vec(),
        "tile_id_from_mac" => {
            let mac: [u8; 6] = h("mac").try_into().unwrap();
            TileId::from_mac(MacAddr(mac)).0.to_vec()
        }
        other => panic!("unknown derivation {other}"),
    }
}

/// Checks every frozen record against both sides; returns per-derivation
/// counts.
pub fn check_all() -> Result<std::collections::BTreeMap<String, usize>, String> {
    let records: Vec<Value> = serde_json::from_str(VECTORS).map_err(|e| e.to_string())?;
    let mut per = std::collections::BTreeMap::<String, usize>::new();
    for rec in &records {
        let want = hex::decode(rec["output"].as_str().unwrap()).unwrap();
        if oracle(rec) != want {
            return Err(format!("oracle disagrees with frozen vector {rec}"));
        }
        if library(rec) != want {
            return Err(format!("library disagrees with frozen vector {rec}"));
        }
        *per.entry(rec["derivation"].as_str().unwrap().to_owned()).or_default() += 1;
    }
    Ok(per)
}
