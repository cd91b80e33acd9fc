//! Key derivations, rotating identifiers and message authentication.
//!
//! Every primitive here is HMAC-SHA256 with a different key, message layout
//! and output slice. Three secrets sit at different trust layers:
//!
//! * [`InterimAuthKey`]: one per vendor, burned in at manufacture and only
//!   used while a tag is being activated.
//! * [`AuthKey`]: established at activation and shared by tag, owner and
//!   server. It roots the [`PrivateId`] schedule.
//! * [`TagKey`]: per connected-channel session key that MACs owner commands.

use std::fmt;
use std::ops::Range;

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

type HmacSha256 = Hmac<Sha256>;

/// Number of distinct identifiers in one rotation cycle.
pub const SCHEDULE_LEN: u32 = 8640;
/// Seconds each identifier is broadcast before rotating.
pub const ROTATION_PERIOD_SECS: u64 = 15 * 60;
/// Length of a full cycle: 8640 slots of 15 minutes, i.e. 90 days.
pub const CYCLE_SECS: u64 = SCHEDULE_LEN as u64 * ROTATION_PERIOD_SECS;

/// Output slice used for both activation and session `sresT`.
pub const SRES_RANGE: Range<usize> = 4..8;
/// Appended after the tile id in the identifier-seed message.
pub const IDENTITY_BYTES: &[u8; 8] = b"identity";
/// Fixed message an owner sends to authenticate on a fresh channel.
pub const OWNER_AUTH_MESSAGE: [u8; 2] = [0x12, 0x13];
/// Suffix appended to the 6-byte MAC address to form a tile id.
pub const TILE_ID_SUFFIX: [u8; 2] = [0x00, 0x01];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid length for {what}: expected {expected} bytes, got {got}")]
    InvalidLength {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("counter {0} outside schedule 0..{SCHEDULE_LEN}")]
    CounterOutOfRange(u32),
    #[error("time {now} precedes activation at {activation}")]
    BeforeActivation { activation: u64, now: u64 },
    #[error("message of {0} bytes exceeds 255")]
    MessageTooLong(usize),
    #[error("invalid hex: {0}")]
    Hex(String),
}

fn hmac_sha256(key: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut mac = <HmacSha256 as KeyInit>::new_from_slice(key).expect("HMAC accepts any key length");
    for part in parts {
        mac.update(part);
    }
    mac.finalize().into_bytes().into()
}

fn ct_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

macro_rules! byte_newtype {
    ($(#[$meta:meta])* $name:ident, $len:expr, $what:literal, secret) => {
        byte_newtype!(@def $(#[$meta])* $name, $len, $what);
        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!(stringify!($name), "({:02x}{:02x}..)"), self.0[0], self.0[1])
            }
        }
    };
    ($(#[$meta:meta])* $name:ident, $len:expr, $what:literal) => {
        byte_newtype!(@def $(#[$meta])* $name, $len, $what);
        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!(stringify!($name), "({})"), hex::encode(self.0))
            }
        }
    };
    (@def $(#[$meta:meta])* $name:ident, $len:expr, $what:literal) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub const fn from_bytes(bytes: [u8; $len]) -> Self {
                Self(bytes)
            }

            pub const fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
                let arr: [u8; $len] = bytes.try_into().map_err(|_| CryptoError::InvalidLength {
                    what: $what,
                    expected: $len,
                    got: bytes.len(),
                })?;
                Ok(Self(arr))
            }

            pub fn from_hex(text: &str) -> Result<Self, CryptoError> {
                let bytes = hex::decode(text).map_err(|e| CryptoError::Hex(e.to_string()))?;
                Self::from_slice(&bytes)
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }
        }

        impl AsRef<[u8]> for $name {
            fn as_ref(&self) -> &[u8] {
                &self.0
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let text = <std::borrow::Cow<'de, str>>::deserialize(d)?;
                Self::from_hex(&text).map_err(serde::de::Error::custom)
            }
        }
    };
}

byte_newtype!(
    /// Vendor-wide activation key.
    InterimAuthKey, 16, "interimAuthKey", secret
);
byte_newtype!(
    /// Long-term tag secret shared by tag, owner and server.
    AuthKey, 16, "authKey", secret
);
byte_newtype!(
    /// Connected-channel session key.
    TagKey, 16, "tagKey", secret
);
byte_newtype!(
    /// Static 8-byte tag identifier.
    TileId, 8, "tileId"
);
byte_newtype!(
    /// Rotating 8-byte identifier carried in `FEED` advertisements.
    PrivateId, 8, "privateId"
);
byte_newtype!(
    /// Per-tag HMAC key from which the identifier schedule is expanded.
    PrivateIdSeed, 32, "privateIdSeed", secret
);
byte_newtype!(
    /// 14-byte owner challenge.
    RandA, 14, "randA"
);
byte_newtype!(
    /// 10-byte tag nonce.
    RandT, 10, "randT"
);
byte_newtype!(
    /// 4-byte challenge response.
    SresT, 4, "sresT"
);
byte_newtype!(
    /// 4-byte connectionless channel identifier.
    ToaToken, 4, "toaToken"
);
byte_newtype!(
    /// 16-byte device / user identifier.
    Uuid16, 16, "uuid"
);

/// 6-byte BLE MAC address, rendered as lowercase colon-separated hex.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub fn parse(text: &str) -> Result<Self, CryptoError> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 6 || parts.iter().any(|p| p.len() != 2) {
            return Err(CryptoError::Hex(format!("malformed MAC address {text:?}")));
        }
        let mut out = [0u8; 6];
        for (slot, part) in out.iter_mut().zip(parts) {
            *slot = u8::from_str_radix(part, 16).map_err(|e| CryptoError::Hex(e.to_string()))?;
        }
        Ok(Self(out))
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl fmt::Debug for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MacAddr({self})")
    }
}

impl Serialize for MacAddr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        Self::parse(&text).map_err(serde::de::Error::custom)
    }
}

impl TileId {
    /// Tile ids are the static MAC followed by [`TILE_ID_SUFFIX`].
    pub fn from_mac(mac: MacAddr) -> Self {
        let mut out = [0u8; 8];
        out[..6].copy_from_slice(&mac.0);
        out[6..].copy_from_slice(&TILE_ID_SUFFIX);
        Self(out)
    }
}

/// Challenge, nonce and response of one tag authentication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AuthTriplet {
    pub rand_a: RandA,
    pub rand_t: RandT,
    pub sres_t: SresT,
}

/// Truncated HMAC tag over one owner→tag message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageMac {
    pub bytes: [u8; 4],
    pub ctr: u16,
}

/// Which derivation a triplet was produced under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripletMode {
    /// Pre-activation, keyed by the vendor interim key and bound to the tile id.
    Activation,
    /// Post-activation, keyed by the auth key.
    Session,
}

/// Sizes of the channel parameters carried by `TOA_OPEN_CHANNEL`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelLayout {
    pub prefix_len: usize,
    pub data_len: usize,
}

impl Default for ChannelLayout {
    fn default() -> Self {
        Self {
            prefix_len: 1,
            data_len: 2,
        }
    }
}

fn sres_from(digest: &[u8; 32]) -> SresT {
    SresT::from_slice(&digest[SRES_RANGE]).expect("slice is 4 bytes")
}

/// `sresT` proving knowledge of the vendor interim key.
///
/// Message is `randA ‖ randT ‖ tileId` (32 bytes).
pub fn derive_sres_activation(
    key: &InterimAuthKey,
    rand_a: &RandA,
    rand_t: &RandT,
    tile_id: &TileId,
) -> SresT {
    sres_from(&hmac_sha256(&key.0, &[&rand_a.0, &rand_t.0, &tile_id.0]))
}

/// First 16 bytes of `HMAC(interimAuthKey, sresT)`.
pub fn derive_auth_key(key: &InterimAuthKey, sres_t: &SresT) -> AuthKey {
    let digest = hmac_sha256(&key.0, &[&sres_t.0]);
    AuthKey::from_slice(&digest[..16]).expect("16-byte slice")
}

/// `sresT` for tag authentication on an activated tag.
///
/// Both nonces are zero-padded on the right to 16 bytes.
pub fn derive_sres_session(key: &AuthKey, rand_a: &RandA, rand_t: &RandT) -> SresT {
    let mut seed = [0u8; 32];
    seed[..14].copy_from_slice(&rand_a.0);
    seed[16..26].copy_from_slice(&rand_t.0);
    sres_from(&hmac_sha256(&key.0, &[&seed]))
}

pub fn derive_private_id_seed(key: &AuthKey, tile_id: &TileId) -> PrivateIdSeed {
    let mut msg = [0u8; 32];
    msg[..8].copy_from_slice(&tile_id.0);
    msg[8..16].copy_from_slice(IDENTITY_BYTES);
    PrivateIdSeed(hmac_sha256(&key.0, &[&msg]))
}

/// Identifier for schedule slot `ctr`. The counter is encoded as 4 bytes
/// little-endian.
pub fn private_id(seed: &PrivateIdSeed, ctr: u32) -> Result<PrivateId, CryptoError> {
    if ctr >= SCHEDULE_LEN {
        return Err(CryptoError::CounterOutOfRange(ctr));
    }
    let digest = hmac_sha256(&seed.0, &[&ctr.to_le_bytes()]);
    Ok(PrivateId::from_slice(&digest[..8]).expect("8-byte slice"))
}

/// Schedule slot in effect `now` seconds for a tag activated at `activation`.
pub fn schedule_counter(activation: u64, now: u64) -> Result<u32, CryptoError> {
    if now < activation {
        return Err(CryptoError::BeforeActivation { activation, now });
    }
    Ok((((now - activation) / ROTATION_PERIOD_SECS) % SCHEDULE_LEN as u64) as u32)
}

pub fn private_id_at(
    key: &AuthKey,
    tile_id: &TileId,
    activation: u64,
    now: u64,
) -> Result<PrivateId, CryptoError> {
    let ctr = schedule_counter(activation, now)?;
    private_id(&derive_private_id_seed(key, tile_id), ctr)
}

/// All 8640 identifiers in counter order.
pub fn full_schedule(seed: &PrivateIdSeed) -> Vec<PrivateId> {
    // Key once; each counter only pays for the message blocks.
    let keyed = <HmacSha256 as KeyInit>::new_from_slice(&seed.0).expect("HMAC accepts any key length");
    (0..SCHEDULE_LEN)
        .map(|ctr| {
            let mut mac = keyed.clone();
            mac.update(&ctr.to_le_bytes());
            let digest = mac.finalize().into_bytes();
            PrivateId::from_slice(&digest[..8]).expect("8-byte slice")
        })
        .collect()
}

/// Session key for the connected channel:
/// `HMAC(authKey, randA ‖ channelData ‖ channelPrefix ‖ toaToken)[0:16]`.
pub fn derive_tag_key(
    key: &AuthKey,
    rand_a: &RandA,
    channel_data: &[u8],
    channel_prefix: &[u8],
    toa_token: &ToaToken,
    layout: ChannelLayout,
) -> Result<TagKey, CryptoError> {
    if channel_data.len() != layout.data_len {
        return Err(CryptoError::InvalidLength {
            what: "channelData",
            expected: layout.data_len,
            got: channel_data.len(),
        });
    }
    if channel_prefix.len() != layout.prefix_len {
        return Err(CryptoError::InvalidLength {
            what: "channelPrefix",
            expected: layout.prefix_len,
            got: channel_prefix.len(),
        });
    }
    let digest = hmac_sha256(&key.0, &[&rand_a.0, channel_data, channel_prefix, &toa_token.0]);
    Ok(TagKey::from_slice(&digest[..16]).expect("16-byte slice"))
}

/// `HMAC(tagKey, ctrA(2, LE) ‖ 0x01 ‖ len(msg) ‖ msg)[0:4]`.
pub fn mac_message(key: &TagKey, ctr_a: u16, msg: &[u8]) -> Result<MessageMac, CryptoError> {
    let len = u8::try_from(msg.len()).map_err(|_| CryptoError::MessageTooLong(msg.len()))?;
    let digest = hmac_sha256(&key.0, &[&ctr_a.to_le_bytes(), &[0x01, len], msg]);
    let mut bytes = [0u8; 4];
    bytes.copy_from_slice(&digest[..4]);
    Ok(MessageMac { bytes, ctr: ctr_a })
}

pub fn verify_message_mac(key: &TagKey, msg: &[u8], mac: &MessageMac) -> bool {
    match mac_message(key, mac.ctr, msg) {
        Ok(expected) => ct_eq(&expected.bytes, &mac.bytes),
        Err(_) => false,
    }
}

/// Recomputes `sresT` under `mode` and compares. `key` is the interim key in
/// activation mode and the auth key in session mode.
pub fn verify_triplet(
    key: &[u8; 16],
    triplet: &AuthTriplet,
    tile_id: &TileId,
    mode: TripletMode,
) -> bool {
    let expected = match mode {
        TripletMode::Activation => derive_sres_activation(
            &InterimAuthKey(*key),
            &triplet.rand_a,
            &triplet.rand_t,
            tile_id,
        ),
        TripletMode::Session => {
            derive_sres_session(&AuthKey(*key), &triplet.rand_a, &triplet.rand_t)
        }
    };
    ct_eq(&expected.0, &triplet.sres_t.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn triplet_for(key: &AuthKey) -> AuthTriplet {
        let rand_a = RandA([7; 14]);
        let rand_t = RandT([9; 10]);
        AuthTriplet {
            rand_a,
            rand_t,
            sres_t: derive_sres_session(key, &rand_a, &rand_t),
        }
    }

    #[test]
    fn length_violations_are_rejected() {
        assert!(matches!(
            RandA::from_slice(&[0; 13]),
            Err(CryptoError::InvalidLength { expected: 14, got: 13, .. })
        ));
        assert!(RandT::from_slice(&[0; 11]).is_err());
        assert!(TileId::from_hex("0011").is_err());
        assert!(AuthKey::from_slice(&[0; 16]).is_ok());
    }

    #[test]
    fn sres_activation_is_deterministic_and_sensitive_to_rand_t() {
        let key = InterimAuthKey([0; 16]);
        let ra = RandA([1; 14]);
        let mut rt = RandT([2; 10]);
        let tid = TileId([3; 8]);
        let a = derive_sres_activation(&key, &ra, &rt, &tid);
        assert_eq!(a, derive_sres_activation(&key, &ra, &rt, &tid));
        rt.0[9] ^= 0x01;
        assert_ne!(a, derive_sres_activation(&key, &ra, &rt, &tid));
    }

    #[test]
    fn auth_key_agrees_between_sides_and_separates_sres() {
        let key = InterimAuthKey([0x42; 16]);
        let sres = SresT([0xde, 0xad, 0xbe, 0xef]);
        let tag_side = derive_auth_key(&key, &sres);
        let server_side = derive_auth_key(&InterimAuthKey([0x42; 16]), &SresT([0xde, 0xad, 0xbe, 0xef]));
        assert_eq!(tag_side, server_side);
        assert_ne!(tag_side, derive_auth_key(&key, &SresT([0xde, 0xad, 0xbe, 0xee])));
    }

    #[test]
    fn session_triplet_checks() {
        let key = AuthKey([0x11; 16]);
        let tid = TileId([5; 8]);
        let t = triplet_for(&key);
        assert!(verify_triplet(&key.0, &t, &tid, TripletMode::Session));
        assert!(!verify_triplet(&[0x12; 16], &t, &tid, TripletMode::Session));
        assert!(!verify_triplet(&key.0, &t, &tid, TripletMode::Activation));

        let mut flipped = t;
        flipped.sres_t.0[0] ^= 0x80;
        assert!(!verify_triplet(&key.0, &flipped, &tid, TripletMode::Session));
    }

    #[test]
    fn private_id_counter_bounds() {
        let seed = PrivateIdSeed([0; 32]);
        assert!(private_id(&seed, 0).is_ok());
        assert!(private_id(&seed, SCHEDULE_LEN - 1).is_ok());
        assert_eq!(private_id(&seed, SCHEDULE_LEN), Err(CryptoError::CounterOutOfRange(8640)));
        assert_eq!(private_id(&seed, 0), private_id(&seed, 0));
    }

    #[test]
    fn full_schedule_is_distinct() {
        let seed = derive_private_id_seed(&AuthKey([0x5a; 16]), &TileId([1; 8]));
        let ids = full_schedule(&seed);
        assert_eq!(ids.len(), 8640);
        assert_eq!(ids.iter().collect::<HashSet<_>>().len(), 8640);
    }

    #[test]
    fn rotation_boundaries_and_cycle() {
        let key = AuthKey([3; 16]);
        let tid = TileId([4; 8]);
        let act = 1_000;
        assert_eq!(schedule_counter(act, act), Ok(0));
        assert_eq!(schedule_counter(act, act + 899), Ok(0));
        assert_eq!(schedule_counter(act, act + 900), Ok(1));
        assert_eq!(schedule_counter(act, act + CYCLE_SECS), Ok(0));
        assert_eq!(CYCLE_SECS, 90 * 86_400);
        assert_eq!(
            private_id_at(&key, &tid, act, act).unwrap(),
            private_id_at(&key, &tid, act, act + CYCLE_SECS).unwrap()
        );
        assert!(matches!(
            private_id_at(&key, &tid, act, act - 1),
            Err(CryptoError::BeforeActivation { .. })
        ));
    }

    #[test]
    fn tag_key_layout_checks() {
        let key = AuthKey([0; 16]);
        let ra = RandA([0; 14]);
        let toa = ToaToken([0; 4]);
        let layout = ChannelLayout::default();
        let k1 = derive_tag_key(&key, &ra, &[0, 0], &[0], &toa, layout).unwrap();
        let k2 = derive_tag_key(&key, &ra, &[0, 0], &[0], &ToaToken([0, 0, 0, 1]), layout).unwrap();
        assert_ne!(k1, k2);
        assert!(derive_tag_key(&key, &ra, &[0], &[0], &toa, layout).is_err());
        assert!(derive_tag_key(&key, &ra, &[0, 0], &[0, 0], &toa, layout).is_err());
        let wide = ChannelLayout { prefix_len: 2, data_len: 4 };
        assert!(derive_tag_key(&key, &ra, &[0; 4], &[0; 2], &toa, wide).is_ok());
    }

    #[test]
    fn message_mac_covers_counter() {
        let key = TagKey([9; 16]);
        let m0 = mac_message(&key, 0, &OWNER_AUTH_MESSAGE).unwrap();
        let m1 = mac_message(&key, 1, &OWNER_AUTH_MESSAGE).unwrap();
        assert_ne!(m0.bytes, m1.bytes);
        assert!(verify_message_mac(&key, &OWNER_AUTH_MESSAGE, &m0));
        assert!(!verify_message_mac(&TagKey([8; 16]), &OWNER_AUTH_MESSAGE, &m0));
        assert_eq!(mac_message(&key, 0, &[0; 256]), Err(CryptoError::MessageTooLong(256)));
        assert!(mac_message(&key, 0, &[0; 255]).is_ok());
    }

    #[test]
    fn mac_and_tile_id_text_forms() {
        let mac = MacAddr([0xc0, 0xff, 0xee, 0x12, 0x34, 0x56]);
        assert_eq!(mac.to_string(), "c0:ff:ee:12:34:56");
        assert_eq!(MacAddr::parse("c0:ff:ee:12:34:56").unwrap(), mac);
        assert!(MacAddr::parse("c0:ff:ee:12:34").is_err());
        assert_eq!(TileId::from_mac(mac).to_hex(), "c0ffee1234560001");
    }

    #[test]
    fn secrets_do_not_print_in_full() {
        let dbg = format!("{:?}", AuthKey([0xab; 16]));
        assert!(!dbg.contains(&"ab".repeat(16)));
    }
}
