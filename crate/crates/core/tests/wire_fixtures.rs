mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{de::DeserializeOwned, Serialize};
use tilesim_core::wire::*;

/// Decodes a fixture and checks the pretty re-encoding is byte-identical.
fn golden<T: Serialize + DeserializeOwned + Validate>(text: &str) -> T {
    let v: T = decode(text).unwrap();
    assert_eq!(encode_pretty(&v).unwrap() + "\n", text);
    v
}

/// Keys must appear in the listed order (extension keys may follow).
fn assert_key_order(text: &str, keys: &[&str]) {
    let mut from = 0;
    for k in keys {
        let needle = format!("\"{k}\":");
        let at = text[from..].find(&needle).unwrap_or_else(|| panic!("{k} missing or out of order"));
        from += at + needle.len();
    }
}

#[test]
fn activation_request_fixture() {
    let text = include_str!("fixtures/activation_request.json");
    let v: ActivationRequest = golden(text);
    assert_eq!(v.model, "TILE 24.00");
    assert_key_order(text, &["tile_uuid", "name", "rand_a", "rand_t", "sres_t", "hw_version", "model", "firmware_version"]);
}

#[test]
fn owner_report_fixture() {
    let text = include_str!("fixtures/owner_location_update.json");
    let v: LocationUpdate = golden(text);
    let tiles = &v.updates[0].tiles;
    assert!(matches!(tiles[0].data, TileData::ConnectedAuthData(_)));
    assert!(matches!(tiles[1].data, TileData::ClientData(_)));
    assert_eq!(v.updates[0].location.extra.len(), 2);
    assert_key_order(
        text,
        &[
            "updates", "record_id", "location", "altitude", "latitude", "longitude", "timestamp", "tiles",
            "connected_auth_data", "rand_a", "rand_t", "sres_t", "tile_uuid", "discovery_timestamp", "record_id",
            "client_data", "tile_uuid", "discovery_timestamp", "record_id",
        ],
    );
}

#[test]
fn finder_report_fixture() {
    let text = include_str!("fixtures/finder_location_update.json");
    let v: LocationUpdate = golden(text);
    let sightings: Vec<_> = v.sightings().collect();
    assert_eq!(sightings.len(), 1);
    assert_eq!(sightings[0].1.payload_service_data.to_hex(), "3f9a6c0d12e4b857");
    assert!(sightings[0].1.extra.contains_key("rssi"));
    assert_key_order(
        text,
        &[
            "updates", "record_id", "location", "altitude", "latitude", "longitude", "timestamp", "tiles",
            "advertised_service_data", "mac_address", "payload_service_data", "discovery_timestamp", "record_id",
            "client_data", "tile_uuid",
        ],
    );
}

#[test]
fn scan_request_fixture() {
    let text = include_str!("fixtures/scan_secure_request.json");
    let v: ScanSecureRequest = golden(text);
    assert_eq!(v.passes().count(), SCAN_PASSES);
    assert!(text.trim_start().starts_with('['));
    assert_eq!(text.matches("\"privateIds\":").count(), 6);
}

#[test]
fn sharing_response_fixture() {
    let text = include_str!("fixtures/sharing_response.json");
    let v: SharingResponse = golden(text);
    assert_eq!(v.result.other_user_email, "bob@example.test");
    assert_key_order(text, &["result", "tileType", "tile_uuid", "user_uuid", "other_user_uuid", "other_user_email"]);
}

#[test]
fn community_response_fixture() {
    let text = include_str!("fixtures/community_stats_response.json");
    let v: CommunityStatsResponse = golden(text);
    assert_eq!(v.result.center_radius, 5.0);
    assert!(v.extra.contains_key("revision"));
    assert_key_order(
        text,
        &[
            "timestamp_ms", "result_code", "result", "timestamp", "center_latitude", "center_longitude",
            "center_radius", "tilers_around", "display_tilers_around", "display_tiles_found",
        ],
    );
}

#[test]
fn registration_and_deletion_fixtures() {
    let r: RegistrationResponse = golden(include_str!("fixtures/registration_response.json"));
    assert_eq!(r.status, STATUS_ACTIVATED);
    let d: DeletionResponse = golden(include_str!("fixtures/deletion_response.json"));
    assert_eq!(d.http_status, 202);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn mixed_bodies_round_trip(seed: u64, kind in 0usize..5) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        prop_assert!(common::wire_gen::case_round_trips(kind, &mut rng));
    }
}
