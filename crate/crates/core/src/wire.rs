//! JSON bodies exchanged between the app and the service, plus the BLE
//! advertisement and device-information records.
//!
//! Field names and nesting follow the captured request/response listings.
//! Fields those listings elide are carried in an `extra` map that survives
//! a decode/encode round trip. Byte fields are lowercase hex.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::crypto::{AuthKey, MacAddr, PrivateId, RandA, RandT, SresT, TileId, Uuid16};

pub type Extra = Map<String, Value>;

/// Registration status the service always answers with.
pub const STATUS_ACTIVATED: &str = "ACTIVATED";
/// Prefix the service puts on generated phone tile ids.
pub const PHONE_TILE_PREFIX: &str = "p!";
/// Community statistics are always reported for a 5-mile radius.
pub const COMMUNITY_RADIUS_MILES: f64 = 5.0;
/// Number of passes in one Scan and Secure run.
pub const SCAN_PASSES: usize = 6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("refusing to encode invalid value: {0}")]
    EncodeRefused(String),
}

/// Semantic checks beyond what the JSON shape enforces.
pub trait Validate {
    fn validate(&self) -> Result<(), String> {
        Ok(())
    }
}

/// Validates then serializes to compact JSON.
pub fn encode<T: Serialize + Validate>(body: &T) -> Result<String, WireError> {
    body.validate().map_err(WireError::EncodeRefused)?;
    serde_json::to_string(body).map_err(|e| WireError::EncodeRefused(e.to_string()))
}

/// Like [`encode`] but indented, as used by the fixture files.
pub fn encode_pretty<T: Serialize + Validate>(body: &T) -> Result<String, WireError> {
    body.validate().map_err(WireError::EncodeRefused)?;
    serde_json::to_string_pretty(body).map_err(|e| WireError::EncodeRefused(e.to_string()))
}

pub fn decode<T: DeserializeOwned + Validate>(text: &str) -> Result<T, WireError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let value: T = serde_path_to_error::deserialize(de).map_err(|e| WireError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    value.validate().map_err(WireError::Validation)?;
    Ok(value)
}

fn check_lat_lon(lat: f64, lon: f64) -> Result<(), String> {
    if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
        return Err(format!("latitude {lat} outside [-90, 90]"));
    }
    if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
        return Err(format!("longitude {lon} outside [-180, 180]"));
    }
    Ok(())
}

fn matches_pattern(text: &str, pattern: &str) -> bool {
    // `9` = digit, `a` = alphanumeric, anything else literal.
    text.len() == pattern.len()
        && text.chars().zip(pattern.chars()).all(|(c, p)| match p {
            '9' => c.is_ascii_digit(),
            'a' => c.is_ascii_alphanumeric(),
            lit => c == lit,
        })
}

pub fn check_model(model: &str) -> Result<(), String> {
    if matches_pattern(model, "aaaa 99.99") {
        Ok(())
    } else {
        Err(format!("model {model:?} not of the form \"xxxx yy.yy\""))
    }
}

pub fn check_firmware(firmware: &str) -> Result<(), String> {
    if matches_pattern(firmware, "99.99.99.9") {
        Ok(())
    } else {
        Err(format!("firmware {firmware:?} not of the form \"xx.xx.xx.x\""))
    }
}

pub fn check_hardware(hw: &str) -> Result<(), String> {
    if matches_pattern(hw, "99.99") {
        Ok(())
    } else {
        Err(format!("hardware version {hw:?} not of the form \"xx.xx\""))
    }
}

// ---------------------------------------------------------------------------
// BLE side

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ServiceUuid {
    /// Advertised before activation.
    #[serde(rename = "FEEC")]
    Feec,
    /// Advertised once activated; carries a privateId.
    #[serde(rename = "FEED")]
    Feed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Advertisement {
    pub mac: MacAddr,
    pub service_uuid: ServiceUuid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<PrivateId>,
    pub emitted_at: u64,
}

impl Advertisement {
    pub fn pre_activation(mac: MacAddr, emitted_at: u64) -> Self {
        Self {
            mac,
            service_uuid: ServiceUuid::Feec,
            payload: None,
            emitted_at,
        }
    }

    pub fn activated(mac: MacAddr, id: PrivateId, emitted_at: u64) -> Self {
        Self {
            mac,
            service_uuid: ServiceUuid::Feed,
            payload: Some(id),
            emitted_at,
        }
    }

    pub fn private_id(&self) -> Option<PrivateId> {
        match self.service_uuid {
            ServiceUuid::Feed => self.payload,
            ServiceUuid::Feec => None,
        }
    }
}

impl Validate for Advertisement {
    fn validate(&self) -> Result<(), String> {
        match (self.service_uuid, self.payload) {
            (ServiceUuid::Feed, None) => Err("FEED advertisement without privateId".into()),
            (ServiceUuid::Feec, Some(_)) => Err("FEEC advertisement carrying a payload".into()),
            _ => Ok(()),
        }
    }
}

/// Values read over the device-information service before activation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TdiRecord {
    pub tile_id: TileId,
    pub model: String,
    pub firmware: String,
    pub hardware_version: String,
}

impl TdiRecord {
    pub fn new(
        tile_id: TileId,
        model: impl Into<String>,
        firmware: impl Into<String>,
        hardware_version: impl Into<String>,
    ) -> Result<Self, WireError> {
        let rec = Self {
            tile_id,
            model: model.into(),
            firmware: firmware.into(),
            hardware_version: hardware_version.into(),
        };
        rec.validate().map_err(WireError::Validation)?;
        Ok(rec)
    }

    /// First four model characters.
    pub fn vendor_id(&self) -> &str {
        &self.model[..4]
    }
}

impl Validate for TdiRecord {
    fn validate(&self) -> Result<(), String> {
        check_model(&self.model)?;
        check_firmware(&self.firmware)?;
        check_hardware(&self.hardware_version)
    }
}

// ---------------------------------------------------------------------------
// Registration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationRequest {
    pub client_uuid: Uuid16,
    pub email: String,
    pub password: String,
}
impl Validate for RegistrationRequest {
    fn validate(&self) -> Result<(), String> {
        if self.email.contains('@') {
            Ok(())
        } else {
            Err(format!("malformed email {:?}", self.email))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResponse {
    pub user_uuid: Uuid16,
    pub status: String,
}
impl Validate for RegistrationResponse {
    fn validate(&self) -> Result<(), String> {
        if self.status == STATUS_ACTIVATED {
            Ok(())
        } else {
            Err(format!("unexpected status {:?}", self.status))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyEmailRequest {
    pub code: String,
}
impl Validate for VerifyEmailRequest {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateTileUuidRequest {
    pub tile_uuid: String,
    pub user_uuid: Uuid16,
    pub tile_type: String,
}
impl Validate for GenerateTileUuidRequest {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateTileUuidResponse {
    pub tile_uuid: String,
}
impl Validate for GenerateTileUuidResponse {
    fn validate(&self) -> Result<(), String> {
        if self.tile_uuid.starts_with(PHONE_TILE_PREFIX) {
            Ok(())
        } else {
            Err(format!("phone tile id {:?} lacks \"p!\" prefix", self.tile_uuid))
        }
    }
}

// ---------------------------------------------------------------------------
// Activation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRequest {
    pub tile_uuid: TileId,
    pub name: String,
    pub rand_a: RandA,
    pub rand_t: RandT,
    pub sres_t: SresT,
    pub hw_version: String,
    pub model: String,
    pub firmware_version: String,
}
impl Validate for ActivationRequest {
    fn validate(&self) -> Result<(), String> {
        check_model(&self.model)?;
        check_firmware(&self.firmware_version)?;
        check_hardware(&self.hw_version)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationResponse {
    pub tile_uuid: TileId,
    pub auth_key: AuthKey,
    pub activation_timestamp: u64,
}
impl Validate for ActivationResponse {}

// ---------------------------------------------------------------------------
// Location reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationUpdate {
    pub updates: Vec<UpdateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub record_id: u64,
    pub location: Location,
    pub tiles: Vec<TileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub altitude: f64,
    pub latitude: f64,
    pub longitude: f64,
    pub timestamp: u64,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileEntry {
    #[serde(flatten)]
    pub data: TileData,
    pub discovery_timestamp: u64,
    pub record_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TileData {
    /// Owner form: fresh session triplet for a connected tag.
    ConnectedAuthData(ConnectedAuthData),
    /// Finder form: a sighted advertisement.
    AdvertisedServiceData(AdvertisedServiceData),
    /// The uploading phone's own tile id.
    ClientData(ClientData),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectedAuthData {
    pub rand_a: RandA,
    pub rand_t: RandT,
    pub sres_t: SresT,
    pub tile_uuid: TileId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvertisedServiceData {
    pub mac_address: MacAddr,
    pub payload_service_data: PrivateId,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientData {
    pub tile_uuid: String,
}

impl Validate for LocationUpdate {
    fn validate(&self) -> Result<(), String> {
        for (i, up) in self.updates.iter().enumerate() {
            let loc = &up.location;
            check_lat_lon(loc.latitude, loc.longitude).map_err(|e| format!("updates[{i}]: {e}"))?;
            if !loc.altitude.is_finite() {
                return Err(format!("updates[{i}]: non-finite altitude"));
            }
        }
        Ok(())
    }
}

impl LocationUpdate {
    /// Finder sightings as `(mac, privateId)` across all update records.
    pub fn sightings(&self) -> impl Iterator<Item = (&UpdateRecord, &AdvertisedServiceData)> {
        self.updates.iter().flat_map(|u| {
            u.tiles.iter().filter_map(move |t| match &t.data {
                TileData::AdvertisedServiceData(a) => Some((u, a)),
                _ => None,
            })
        })
    }
}

// ---------------------------------------------------------------------------
// Scan and Secure

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivateIdList {
    #[serde(rename = "privateIds")]
    pub private_ids: Vec<PrivateId>,
}

/// Six per-pass identifier lists. The response uses the same shape.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScanSecureRequest(pub [PrivateIdList; SCAN_PASSES]);

pub type ScanSecureResponse = ScanSecureRequest;

impl Validate for ScanSecureRequest {}

impl ScanSecureRequest {
    pub fn from_passes(passes: Vec<Vec<PrivateId>>) -> Result<Self, WireError> {
        let lists: Vec<PrivateIdList> = passes
            .into_iter()
            .map(|private_ids| PrivateIdList { private_ids })
            .collect();
        let n = lists.len();
        let arr: [PrivateIdList; SCAN_PASSES] = lists.try_into().map_err(|_| WireError::Schema {
            path: ".".into(),
            message: format!("expected {SCAN_PASSES} scan passes, got {n}"),
        })?;
        Ok(Self(arr))
    }

    pub fn passes(&self) -> impl Iterator<Item = &[PrivateId]> {
        self.0.iter().map(|l| l.private_ids.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntiTheftRequest {
    pub identity_document: IdentityDocument,
}
impl Validate for AntiTheftRequest {}

/// Stub of what an identity-verification provider hands back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityDocument {
    pub provider: String,
    pub document_id: String,
    pub live_photos: u32,
}

// ---------------------------------------------------------------------------
// Transfer and sharing

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRequest {
    pub tile_uuid: TileId,
    pub recipient_email: String,
}
impl Validate for TransferRequest {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareRequest {
    pub tile_uuid: TileId,
    pub email: String,
}
impl Validate for ShareRequest {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharingResponse {
    pub result: SharingResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharingResult {
    #[serde(rename = "tileType")]
    pub tile_type: String,
    pub tile_uuid: TileId,
    pub user_uuid: Uuid16,
    pub other_user_uuid: Uuid16,
    pub other_user_email: String,
    #[serde(flatten)]
    pub extra: Extra,
}
impl Validate for SharingResponse {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileListResponse {
    pub tiles: Vec<TileListEntry>,
}
impl Validate for TileListResponse {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileListEntry {
    pub tile_uuid: TileId,
    pub name: String,
    pub auth_key: AuthKey,
    pub shared: bool,
    pub activation_timestamp: u64,
}

// ---------------------------------------------------------------------------
// History, community, deletion

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryResponse {
    pub tile_uuid: TileId,
    pub points: Vec<HistoryPoint>,
}
impl Validate for HistoryResponse {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: f64,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityStatsResponse {
    pub timestamp_ms: u64,
    pub result_code: i64,
    pub result: CommunityResult,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityResult {
    pub timestamp: u64,
    pub center_latitude: f64,
    pub center_longitude: f64,
    pub center_radius: f64,
    pub tilers_around: u64,
    pub display_tilers_around: bool,
    pub display_tiles_found: bool,
    #[serde(flatten)]
    pub extra: Extra,
}

impl Validate for CommunityStatsResponse {
    fn validate(&self) -> Result<(), String> {
        if self.result.center_radius != COMMUNITY_RADIUS_MILES {
            return Err(format!("center_radius {} != 5.0", self.result.center_radius));
        }
        check_lat_lon(self.result.center_latitude, self.result.center_longitude)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionRequest {
    pub password: String,
}
impl Validate for DeletionRequest {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionResponse {
    pub http_status: u16,
}
impl Validate for DeletionResponse {
    fn validate(&self) -> Result<(), String> {
        if self.http_status == 202 {
            Ok(())
        } else {
            Err(format!("deletion status {} != 202", self.http_status))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
impl Validate for ErrorBody {}

/// Acknowledgement bodies carry no schema.
impl Validate for Value {}

#[cfg(test)]
mod tests {
    use super::*;

    fn pid(b: u8) -> PrivateId {
        PrivateId([b; 8])
    }

    #[test]
    fn scan_request_is_array_of_six_objects() {
        let req = ScanSecureRequest::from_passes((0..6).map(|i| vec![pid(i)]).collect()).unwrap();
        let json = encode(&req).unwrap();
        let v: Value = serde_json::from_str(&json).unwrap();
        let arr = v.as_array().unwrap();
        assert_eq!(arr.len(), 6);
        assert_eq!(arr[2]["privateIds"][0], "0202020202020202");
    }

    #[test]
    fn five_passes_is_a_schema_error() {
        let text = r#"[{"privateIds":[]},{"privateIds":[]},{"privateIds":[]},{"privateIds":[]},{"privateIds":[]}]"#;
        assert!(matches!(decode::<ScanSecureRequest>(text), Err(WireError::Schema { .. })));
        assert!(ScanSecureRequest::from_passes(vec![vec![]; 5]).is_err());
    }

    #[test]
    fn empty_updates() {
        let body = LocationUpdate { updates: vec![] };
        assert_eq!(encode(&body).unwrap(), r#"{"updates":[]}"#);
    }

    #[test]
    fn latitude_out_of_range_is_validation_error() {
        let text = r#"{"updates":[{"record_id":1,"location":{"altitude":0.0,"latitude":91.0,"longitude":0.0,"timestamp":0},"tiles":[]}]}"#;
        assert!(matches!(decode::<LocationUpdate>(text), Err(WireError::Validation(_))));
    }

    #[test]
    fn schema_error_carries_path() {
        let text = r#"{"updates":[{"record_id":1,"location":{"altitude":0.0,"latitude":1.0,"longitude":0.0,"timestamp":0},"tiles":[{"advertised_service_data":{"mac_address":"zz","payload_service_data":"00"},"discovery_timestamp":0,"record_id":2}]}]}"#;
        match decode::<LocationUpdate>(text) {
            Err(WireError::Schema { path, .. }) => assert!(path.starts_with("updates[0]"), "{path}"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn encode_refuses_invalid_values() {
        let bad = RegistrationResponse {
            user_uuid: Uuid16([0; 16]),
            status: "PENDING".into(),
        };
        assert!(matches!(encode(&bad), Err(WireError::EncodeRefused(_))));
    }

    #[test]
    fn tdi_formats() {
        let tid = TileId([1; 8]);
        let rec = TdiRecord::new(tid, "TILE 24.00", "48.04.16.0", "24.00").unwrap();
        assert_eq!(rec.vendor_id(), "TILE");
        assert!(TdiRecord::new(tid, "TILE24.00", "48.04.16.0", "24.00").is_err());
        assert!(TdiRecord::new(tid, "TILE 24.00", "48.4.16.0", "24.00").is_err());
        assert!(TdiRecord::new(tid, "TILE 24.00", "48.04.16.0", "2400").is_err());
    }

    #[test]
    fn advertisement_invariant() {
        let mac = MacAddr([1; 6]);
        assert!(Advertisement::pre_activation(mac, 0).validate().is_ok());
        assert!(Advertisement::activated(mac, pid(1), 0).validate().is_ok());
        let broken = Advertisement {
            mac,
            service_uuid: ServiceUuid::Feed,
            payload: None,
            emitted_at: 0,
        };
        assert!(broken.validate().is_err());
        assert_eq!(Advertisement::pre_activation(mac, 0).private_id(), None);
    }

    #[test]
    fn extension_fields_survive_round_trip() {
        let text = r#"{"updates":[{"record_id":1,"location":{"altitude":1.5,"latitude":1.0,"longitude":2.0,"timestamp":7,"accuracy":3.0,"provider":"fused"},"tiles":[{"advertised_service_data":{"mac_address":"01:02:03:04:05:06","payload_service_data":"0102030405060708","rssi":-70},"discovery_timestamp":7,"record_id":2}]}]}"#;
        let body: LocationUpdate = decode(text).unwrap();
        assert_eq!(body.updates[0].location.extra["provider"], "fused");
        assert_eq!(encode(&body).unwrap(), text);
    }
}
