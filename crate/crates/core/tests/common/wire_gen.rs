//! Seeded random generators for wire bodies, shared by the round-trip
//! property tests and the acceptance fuzz corpus.

use rand::{Rng, RngCore};
use serde_json::{json, Value};
use tilesim_core::crypto::*;
use tilesim_core::wire::*;

fn bytes<const N: usize>(rng: &mut impl RngCore) -> [u8; N] {
    let mut b = [0u8; N];
    rng.fill_bytes(&mut b);
    b
}

fn text(rng: &mut impl RngCore) -> String {
    let n = rng.random_range(0..12);
    (0..n)
        .map(|_| {
            let c: u32 = rng.random_range(0x20..0x2400);
            char::from_u32(c).unwrap_or('?')
        })
        .collect()
}

fn scalar(rng: &mut impl RngCore) -> Value {
    match rng.random_range(0..5) {
        0 => json!(rng.random::<i64>()),
        1 => json!(rng.random_range(-1e6..1e6f64)),
        2 => json!(rng.random::<bool>()),
        3 => json!(text(rng)),
        _ => Value::Null,
    }
}

pub fn extra(rng: &mut impl RngCore) -> Extra {
    let mut m = Extra::new();
    for i in 0..rng.random_range(0..3) {
        let v = if rng.random_bool(0.2) {
            json!([scalar(rng), { "k": scalar(rng) }])
        } else {
            scalar(rng)
        };
        m.insert(format!("x_{i}_{}", rng.random_range(0..100)), v);
    }
    m
}

pub fn mac(rng: &mut impl RngCore) -> MacAddr {
    MacAddr(bytes(rng))
}

pub fn location(rng: &mut impl RngCore) -> Location {
    Location {
        altitude: rng.random_range(-400.0..9000.0),
        latitude: rng.random_range(-90.0..=90.0),
        longitude: rng.random_range(-180.0..=180.0),
        timestamp: rng.random_range(0..4_000_000_000),
        extra: extra(rng),
    }
}

pub fn location_update(rng: &mut impl RngCore) -> LocationUpdate {
    let updates = (0..rng.random_range(1..4))
        .map(|_| {
            let record_id = rng.random_range(0..1_000_000);
            let tiles = (0..rng.random_range(0..5))
                .map(|_| {
                    let data = match rng.random_range(0..3) {
                        0 => TileData::ConnectedAuthData(ConnectedAuthData {
                            rand_a: RandA(bytes(rng)),
                            rand_t: RandT(bytes(rng)),
                            sres_t: SresT(bytes(rng)),
                            tile_uuid: TileId(bytes(rng)),
                        }),
                        1 => TileData::AdvertisedServiceData(AdvertisedServiceData {
                            mac_address: mac(rng),
                            payload_service_data: PrivateId(bytes(rng)),
                            extra: extra(rng),
                        }),
                        _ => TileData::ClientData(ClientData {
                            tile_uuid: format!("{PHONE_TILE_PREFIX}{}", hex::encode(bytes::<8>(rng))),
                        }),
                    };
                    TileEntry {
                        data,
                        discovery_timestamp: rng.random_range(0..4_000_000_000),
                        record_id,
                    }
                })
                .collect();
            UpdateRecord {
                record_id,
                location: location(rng),
                tiles,
            }
        })
        .collect();
    LocationUpdate { updates }
}

pub fn scan_request(rng: &mut impl RngCore) -> ScanSecureRequest {
    ScanSecureRequest(std::array::from_fn(|_| PrivateIdList {
        private_ids: (0..rng.random_range(0..6)).map(|_| PrivateId(bytes(rng))).collect(),
    }))
}

pub fn activation_request(rng: &mut impl RngCore) -> ActivationRequest {
    ActivationRequest {
        tile_uuid: TileId(bytes(rng)),
        name: text(rng),
        rand_a: RandA(bytes(rng)),
        rand_t: RandT(bytes(rng)),
        sres_t: SresT(bytes(rng)),
        hw_version: format!("{:02}.{:02}", rng.random_range(1..100), rng.random_range(0..100)),
        model: format!("TILE {:02}.{:02}", rng.random_range(1..100), rng.random_range(0..100)),
        firmware_version: format!(
            "{:02}.{:02}.{:02}.{}",
            rng.random_range(0..100),
            rng.random_range(0..100),
            rng.random_range(0..100),
            rng.random_range(0..10)
        ),
    }
}

pub fn sharing_response(rng: &mut impl RngCore) -> SharingResponse {
    SharingResponse {
        result: SharingResult {
            tile_type: "TILE".into(),
            tile_uuid: TileId(bytes(rng)),
            user_uuid: Uuid16(bytes(rng)),
            other_user_uuid: Uuid16(bytes(rng)),
            other_user_email: format!("{}@example.test", hex::encode(bytes::<4>(rng))),
            extra: extra(rng),
        },
    }
}

pub fn community_response(rng: &mut impl RngCore) -> CommunityStatsResponse {
    let ts = rng.random_range(0..4_000_000_000u64);
    CommunityStatsResponse {
        timestamp_ms: ts * 1000,
        result_code: 0,
        result: CommunityResult {
            timestamp: ts,
            center_latitude: rng.random_range(-90.0..=90.0),
            center_longitude: rng.random_range(-180.0..=180.0),
            center_radius: COMMUNITY_RADIUS_MILES,
            tilers_around: rng.random_range(0..1_000_000),
            display_tilers_around: true,
            display_tiles_found: false,
            extra: extra(rng),
        },
        extra: extra(rng),
    }
}

/// Encodes a value, decodes it back and re-encodes; returns whether both
/// the value and the bytes survived.
pub fn round_trips<T>(v: &T) -> bool
where
    T: serde::Serialize + serde::de::DeserializeOwned + Validate + PartialEq + std::fmt::Debug,
{
    let text = encode(v).expect("generated value encodes");
    match decode::<T>(&text) {
        Ok(back) => back == *v && encode(&back).ok().as_deref() == Some(text.as_str()),
        Err(_) => false,
    }
}

/// One random case from a mixed corpus; `i` picks the body type.
pub fn case_round_trips(i: usize, rng: &mut impl RngCore) -> bool {
    match i % 5 {
        0 => round_trips(&location_update(rng)),
        1 => round_trips(&scan_request(rng)),
        2 => round_trips(&activation_request(rng)),
        3 => round_trips(&sharing_response(rng)),
        _ => round_trips(&community_response(rng)),
    }
}
