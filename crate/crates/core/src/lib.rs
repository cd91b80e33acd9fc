//! Emulator of the Tile offline-finding system: tag firmware, owner and
//! finder apps, the provider's server, a simulated BLE medium, and the attack
//! suite that scores each privacy and framing weakness against ground truth.

pub mod api;
pub mod attacks;
pub mod client;
pub mod crypto;
pub mod scenario;
pub mod server;
pub mod sim;
pub mod tag;
pub mod wire;

pub use api::{ApiRequest, ApiResponse, Method, Transport};
pub use attacks::{AttackVerdict, Outcome};
pub use client::Client;
pub use crypto::{AuthKey, AuthTriplet, InterimAuthKey, MacAddr, PrivateId, TagKey, TileId};
pub use scenario::{Report, RunOutput, Scenario};
pub use server::{Server, ServerConfig, Snapshot};
pub use sim::{Position, World};
pub use tag::{Tag, TagConfig};
pub use wire::WireError;
