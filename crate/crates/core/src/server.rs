//! Service-provider emulator: registries, activation, report ingestion,
//! history, Scan and Secure filtering, community stats, sharing and
//! deletion, plus a router over [`ApiRequest`].

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::api::{ApiRequest, ApiResponse, Method};
use crate::crypto::{
    self, AuthKey, AuthTriplet, InterimAuthKey, PrivateId, TileId, TripletMode, Uuid16,
};
use crate::sim::{haversine_miles, GeoPoint, SimRng};
use crate::wire::{
    self, ActivationRequest, ActivationResponse, AntiTheftRequest, CommunityResult,
    CommunityStatsResponse, DeletionRequest, DeletionResponse, ErrorBody, Extra,
    GenerateTileUuidRequest, GenerateTileUuidResponse, HistoryPoint, HistoryResponse,
    IdentityDocument, LocationUpdate, RegistrationRequest, RegistrationResponse,
    ScanSecureRequest, ScanSecureResponse, ShareRequest, SharingResponse, SharingResult,
    TileListEntry, TileListResponse, TransferRequest, Validate, VerifyEmailRequest, WireError,
    COMMUNITY_RADIUS_MILES, PHONE_TILE_PREFIX, STATUS_ACTIVATED,
};

pub const DEFAULT_VENDOR: &str = "TILE";

/// Deterministic stand-in for a vendor's provisioning key.
pub fn vendor_interim_key(vendor: &str) -> InterimAuthKey {
    let d = Sha256::digest(format!("interim-auth-key:{vendor}"));
    InterimAuthKey::from_slice(&d[..16]).expect("16 bytes")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServerError {
    #[error("{0}")]
    BadRequest(String),
    #[error("missing or unknown user")]
    Unauthorized,
    /// Also returned for tiles that do not exist.
    #[error("not authorized for this tile")]
    Denied,
    #[error("{0}")]
    Rejected(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
}

impl ServerError {
    pub fn status(&self) -> u16 {
        match self {
            ServerError::BadRequest(_) => 400,
            ServerError::Unauthorized => 401,
            ServerError::Denied | ServerError::Rejected(_) => 403,
            ServerError::NotFound(_) => 404,
            ServerError::Conflict(_) => 409,
        }
    }
}

impl From<WireError> for ServerError {
    fn from(e: WireError) -> Self {
        ServerError::BadRequest(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetentionPolicy {
    /// Reports outlive the account that uploaded them.
    #[default]
    KeepReports,
    PurgeReports,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    pub seed: u64,
    pub vendors: BTreeMap<String, InterimAuthKey>,
    pub retention: RetentionPolicy,
    /// Counterfactual: issue a new authKey whenever a tile changes hands or a
    /// share is revoked.
    pub fresh_key_on_transfer: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            vendors: BTreeMap::from([(DEFAULT_VENDOR.to_owned(), vendor_interim_key(DEFAULT_VENDOR))]),
            retention: RetentionPolicy::default(),
            fresh_key_on_transfer: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LastPosition {
    pub latitude: f64,
    pub longitude: f64,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_uuid: Uuid16,
    pub email: String,
    pub password_digest: String,
    pub client_uuids: BTreeSet<Uuid16>,
    pub phone_tile_uuids: BTreeSet<String>,
    pub email_verified: bool,
    pub verification_code: String,
    pub anti_theft_identity: Option<IdentityDocument>,
    pub last_position: Option<LastPosition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagRecord {
    pub tile_id: TileId,
    pub name: String,
    pub auth_key: AuthKey,
    pub owner_uuid: Uuid16,
    pub shared_uuids: BTreeSet<Uuid16>,
    pub anti_theft: bool,
    pub vendor_id: String,
    pub activation_time: u64,
    pub model: String,
    pub firmware: String,
    pub hardware_version: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConsumedTriplet {
    pub tile_id: TileId,
    #[serde(flatten)]
    pub triplet: AuthTriplet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredReport {
    pub uploader: Uuid16,
    pub received_at: u64,
    pub update: LocationUpdate,
}

/// Whole-server state as persisted to disk.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub users: Vec<UserRecord>,
    pub tags: Vec<TagRecord>,
    pub triplets: Vec<ConsumedTriplet>,
    pub reports: Vec<StoredReport>,
}

impl Snapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, WireError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| WireError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MailboxMessage {
    pub code: String,
}
impl Validate for MailboxMessage {}

#[derive(Debug)]
pub struct Server {
    config: ServerConfig,
    users: BTreeMap<Uuid16, UserRecord>,
    emails: BTreeMap<String, Uuid16>,
    tags: BTreeMap<TileId, TagRecord>,
    triplets: BTreeSet<ConsumedTriplet>,
    reports: Vec<StoredReport>,
    index: HashMap<PrivateId, (TileId, u32)>,
    rng: SimRng,
}

type Result<T> = std::result::Result<T, ServerError>;

impl Server {
    pub fn new(config: ServerConfig) -> Self {
        Self {
            rng: SimRng::seed_from_u64(config.seed ^ 0x5e12_7e12),
            config,
            users: BTreeMap::new(),
            emails: BTreeMap::new(),
            tags: BTreeMap::new(),
            triplets: BTreeSet::new(),
            reports: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_snapshot(config: ServerConfig, snap: Snapshot) -> Self {
        let mut s = Self::new(config);
        for u in snap.users {
            s.emails.insert(u.email.clone(), u.user_uuid);
            s.users.insert(u.user_uuid, u);
        }
        for t in snap.tags {
            s.index_tag(&t.auth_key, &t.tile_id);
            s.tags.insert(t.tile_id, t);
        }
        s.triplets = snap.triplets.into_iter().collect();
        s.reports = snap.reports;
        s
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            users: self.users.values().cloned().collect(),
            tags: self.tags.values().cloned().collect(),
            triplets: self.triplets.iter().copied().collect(),
            reports: self.reports.clone(),
        }
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn users(&self) -> impl Iterator<Item = &UserRecord> {
        self.users.values()
    }

    pub fn user(&self, uuid: &Uuid16) -> Option<&UserRecord> {
        self.users.get(uuid)
    }

    pub fn tag(&self, tile_id: &TileId) -> Option<&TagRecord> {
        self.tags.get(tile_id)
    }

    pub fn tags(&self) -> impl Iterator<Item = &TagRecord> {
        self.tags.values()
    }

    pub fn reports(&self) -> &[StoredReport] {
        &self.reports
    }

    pub fn triplet_count(&self) -> usize {
        self.triplets.len()
    }

    pub fn index_len(&self) -> usize {
        self.index.len()
    }

    pub fn resolve(&self, id: &PrivateId) -> Option<(TileId, u32)> {
        self.index.get(id).copied()
    }

    /// Recomputes every schedule from the tag records and compares with the
    /// maintained index.
    pub fn index_matches_regeneration(&self) -> bool {
        let mut expected = HashMap::new();
        for t in self.tags.values() {
            let seed = crypto::derive_private_id_seed(&t.auth_key, &t.tile_id);
            for (ctr, id) in crypto::full_schedule(&seed).into_iter().enumerate() {
                expected.insert(id, (t.tile_id, ctr as u32));
            }
        }
        expected == self.index
    }

    fn index_tag(&mut self, key: &AuthKey, tile_id: &TileId) {
        let seed = crypto::derive_private_id_seed(key, tile_id);
        for (ctr, id) in crypto::full_schedule(&seed).into_iter().enumerate() {
            self.index.insert(id, (*tile_id, ctr as u32));
        }
    }

    fn unindex_tag(&mut self, tile_id: &TileId) {
        self.index.retain(|_, (t, _)| t != tile_id);
    }

    fn fresh_uuid(&mut self) -> Uuid16 {
        let mut b = [0u8; 16];
        self.rng.fill_bytes(&mut b);
        Uuid16(b)
    }

    fn digest_password(user: &Uuid16, password: &str) -> String {
        hex::encode(Sha256::new().chain_update(user.0).chain_update(password.as_bytes()).finalize())
    }

    fn known_user(&self, user: &Uuid16) -> Result<&UserRecord> {
        self.users.get(user).ok_or(ServerError::Unauthorized)
    }

    fn user_by_email(&self, email: &str) -> Result<Uuid16> {
        self.emails
            .get(email)
            .copied()
            .ok_or_else(|| ServerError::NotFound(format!("user {email}")))
    }

    fn owned_tag(&self, user: &Uuid16, tile: &TileId) -> Result<&TagRecord> {
        match self.tags.get(tile) {
            Some(t) if t.owner_uuid == *user => Ok(t),
            _ => Err(ServerError::Denied),
        }
    }

    // -----------------------------------------------------------------------
    // Accounts

    pub fn create_user(&mut self, req: &RegistrationRequest) -> Result<RegistrationResponse> {
        if self.emails.contains_key(&req.email) {
            return Err(ServerError::Conflict(format!("email {} already registered", req.email)));
        }
        let user_uuid = self.fresh_uuid();
        let code = format!("{:06}", self.rng.random_range(0..1_000_000u32));
        let rec = UserRecord {
            user_uuid,
            email: req.email.clone(),
            password_digest: Self::digest_password(&user_uuid, &req.password),
            client_uuids: BTreeSet::from([req.client_uuid]),
            phone_tile_uuids: BTreeSet::new(),
            email_verified: false,
            verification_code: code,
            anti_theft_identity: None,
            last_position: None,
        };
        self.emails.insert(req.email.clone(), user_uuid);
        self.users.insert(user_uuid, rec);
        Ok(RegistrationResponse {
            user_uuid,
            status: STATUS_ACTIVATED.into(),
        })
    }

    /// Stand-in for email delivery.
    pub fn mailbox(&self, email: &str) -> Result<MailboxMessage> {
        let uuid = self.user_by_email(email)?;
        Ok(MailboxMessage {
            code: self.users[&uuid].verification_code.clone(),
        })
    }

    pub fn verify_email(&mut self, user: &Uuid16, code: &str) -> Result<()> {
        let rec = self.users.get_mut(user).ok_or(ServerError::Unauthorized)?;
        if rec.verification_code != code {
            return Err(ServerError::Rejected("wrong verification code".into()));
        }
        rec.email_verified = true;
        Ok(())
    }

    pub fn generate_tile_uuid(&mut self, req: &GenerateTileUuidRequest) -> Result<GenerateTileUuidResponse> {
        self.known_user(&req.user_uuid)?;
        let mut b = [0u8; 8];
        self.rng.fill_bytes(&mut b);
        let tile_uuid = format!("{PHONE_TILE_PREFIX}{}", hex::encode(b));
        self.users
            .get_mut(&req.user_uuid)
            .expect("checked")
            .phone_tile_uuids
            .insert(tile_uuid.clone());
        Ok(GenerateTileUuidResponse { tile_uuid })
    }

    pub fn delete_user(&mut self, user: &Uuid16, password: &str) -> Result<DeletionResponse> {
        let rec = self.known_user(user)?;
        if rec.password_digest != Self::digest_password(user, password) {
            return Err(ServerError::Denied);
        }
        let rec = self.users.remove(user).expect("checked");
        self.emails.remove(&rec.email);
        let owned: Vec<TileId> = self
            .tags
            .values()
            .filter(|t| t.owner_uuid == *user)
            .map(|t| t.tile_id)
            .collect();
        for tile in owned {
            self.tags.remove(&tile);
            self.unindex_tag(&tile);
        }
        for t in self.tags.values_mut() {
            t.shared_uuids.remove(user);
        }
        if self.config.retention == RetentionPolicy::PurgeReports {
            self.reports.retain(|r| r.uploader != *user);
        }
        Ok(DeletionResponse { http_status: 202 })
    }

    // -----------------------------------------------------------------------
    // Activation

    pub fn establish_auth_key(&mut self, req: &ActivationRequest, user: &Uuid16, now: u64) -> Result<ActivationResponse> {
        let anti_theft = self.known_user(user)?.anti_theft_identity.is_some();
        let vendor = req.model.get(..4).unwrap_or_default().to_owned();
        let interim = *self
            .config
            .vendors
            .get(&vendor)
            .ok_or_else(|| ServerError::Rejected(format!("unknown vendor {vendor:?}")))?;
        let consumed = ConsumedTriplet {
            tile_id: req.tile_uuid,
            triplet: AuthTriplet {
                rand_a: req.rand_a,
                rand_t: req.rand_t,
                sres_t: req.sres_t,
            },
        };
        if self.triplets.contains(&consumed) {
            return Err(ServerError::Rejected("authentication triplet already used".into()));
        }
        if !crypto::verify_triplet(&interim.0, &consumed.triplet, &req.tile_uuid, TripletMode::Activation) {
            return Err(ServerError::Rejected("authentication triplet invalid".into()));
        }
        if self.tags.contains_key(&req.tile_uuid) {
            return Err(ServerError::Conflict("tile already activated".into()));
        }
        self.triplets.insert(consumed);
        let auth_key = crypto::derive_auth_key(&interim, &req.sres_t);
        self.index_tag(&auth_key, &req.tile_uuid);
        self.tags.insert(
            req.tile_uuid,
            TagRecord {
                tile_id: req.tile_uuid,
                name: req.name.clone(),
                auth_key,
                owner_uuid: *user,
                shared_uuids: BTreeSet::new(),
                anti_theft,
                vendor_id: vendor,
                activation_time: now,
                model: req.model.clone(),
                firmware: req.firmware_version.clone(),
                hardware_version: req.hw_version.clone(),
            },
        );
        Ok(ActivationResponse {
            tile_uuid: req.tile_uuid,
            auth_key,
            activation_timestamp: now,
        })
    }

    // -----------------------------------------------------------------------
    // Location

    pub fn ingest_location_update(&mut self, update: LocationUpdate, uploader: &Uuid16, now: u64) -> Result<()> {
        self.known_user(uploader)?;
        update.validate().map_err(ServerError::BadRequest)?;
        if let Some(latest) = update.updates.iter().max_by_key(|u| u.location.timestamp) {
            let rec = self.users.get_mut(uploader).expect("checked");
            let newer = rec.last_position.map_or(true, |p| p.timestamp <= latest.location.timestamp);
            if newer {
                rec.last_position = Some(LastPosition {
                    latitude: latest.location.latitude,
                    longitude: latest.location.longitude,
                    timestamp: latest.location.timestamp,
                });
            }
        }
        self.reports.push(StoredReport {
            uploader: *uploader,
            received_at: now,
            update,
        });
        Ok(())
    }

    pub fn history(&self, tile: &TileId, user: &Uuid16) -> Result<HistoryResponse> {
        self.known_user(user)?;
        match self.tags.get(tile) {
            Some(t) if t.owner_uuid == *user || t.shared_uuids.contains(user) => {}
            _ => return Err(ServerError::Denied),
        }
        let mut points: Vec<HistoryPoint> = self
            .reports
            .iter()
            .flat_map(|r| r.update.sightings())
            .filter(|(_, s)| self.resolve(&s.payload_service_data).is_some_and(|(t, _)| t == *tile))
            .map(|(u, _)| HistoryPoint {
                latitude: u.location.latitude,
                longitude: u.location.longitude,
                altitude: u.location.altitude,
                timestamp: u.location.timestamp,
            })
            .collect();
        points.sort_by_key(|p| p.timestamp);
        Ok(HistoryResponse {
            tile_uuid: *tile,
            points,
        })
    }

    // -----------------------------------------------------------------------
    // Scan and Secure, Anti-Theft

    /// Drops ids of anti-theft tiles from every pass; ids the index does not
    /// know pass through untouched.
    pub fn filter_scan(&self, req: &ScanSecureRequest) -> ScanSecureResponse {
        let mut out = req.clone();
        for list in out.0.iter_mut() {
            list.private_ids.retain(|id| match self.resolve(id) {
                Some((tile, _)) => !self.tags.get(&tile).is_some_and(|t| t.anti_theft),
                None => true,
            });
        }
        out
    }

    pub fn enable_anti_theft(&mut self, user: &Uuid16, doc: IdentityDocument) -> Result<()> {
        let rec = self.users.get_mut(user).ok_or(ServerError::Unauthorized)?;
        rec.anti_theft_identity = Some(doc);
        for t in self.tags.values_mut().filter(|t| t.owner_uuid == *user) {
            t.anti_theft = true;
        }
        Ok(())
    }

    // -----------------------------------------------------------------------
    // Community

    pub fn community_stats(&mut self, latitude: f64, longitude: f64, querier: Option<&Uuid16>, now: u64) -> Result<CommunityStatsResponse> {
        if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
            return Err(ServerError::BadRequest("coordinates out of range".into()));
        }
        if let Some(q) = querier {
            let rec = self.users.get_mut(q).ok_or(ServerError::Unauthorized)?;
            rec.last_position = Some(LastPosition {
                latitude,
                longitude,
                timestamp: now,
            });
        }
        let center = GeoPoint { latitude, longitude };
        let tilers_around = self
            .users
            .values()
            .filter_map(|u| u.last_position)
            .filter(|p| {
                haversine_miles(center, GeoPoint { latitude: p.latitude, longitude: p.longitude })
                    <= COMMUNITY_RADIUS_MILES
            })
            .count() as u64;
        Ok(CommunityStatsResponse {
            timestamp_ms: now * 1000,
            result_code: 0,
            result: CommunityResult {
                timestamp: now * 1000,
                center_latitude: latitude,
                center_longitude: longitude,
                center_radius: COMMUNITY_RADIUS_MILES,
                tilers_around,
                display_tilers_around: true,
                display_tiles_found: false,
                extra: Extra::new(),
            },
            extra: Extra::new(),
        })
    }

    // -----------------------------------------------------------------------
    // Transfer and sharing

    fn rotate_key(&mut self, tile: &TileId, now: u64) {
        let mut b = [0u8; 16];
        self.rng.fill_bytes(&mut b);
        let key = AuthKey(b);
        self.unindex_tag(tile);
        self.index_tag(&key, tile);
        let t = self.tags.get_mut(tile).expect("caller checked");
        t.auth_key = key;
        t.activation_time = now;
    }

    pub fn transfer(&mut self, user: &Uuid16, req: &TransferRequest, now: u64) -> Result<()> {
        self.known_user(user)?;
        self.owned_tag(user, &req.tile_uuid)?;
        let recipient = self.user_by_email(&req.recipient_email)?;
        let anti_theft = self.users[&recipient].anti_theft_identity.is_some();
        let t = self.tags.get_mut(&req.tile_uuid).expect("checked");
        t.owner_uuid = recipient;
        t.shared_uuids.remove(&recipient);
        t.anti_theft = anti_theft;
        if self.config.fresh_key_on_transfer {
            self.rotate_key(&req.tile_uuid, now);
        }
        Ok(())
    }

    pub fn add_share(&mut self, user: &Uuid16, req: &ShareRequest) -> Result<SharingResponse> {
        self.known_user(user)?;
        self.owned_tag(user, &req.tile_uuid)?;
        let other = self.user_by_email(&req.email)?;
        if other == *user {
            return Err(ServerError::Conflict("cannot share with yourself".into()));
        }
        self.tags
            .get_mut(&req.tile_uuid)
            .expect("checked")
            .shared_uuids
            .insert(other);
        Ok(SharingResponse {
            result: SharingResult {
                tile_type: "TILE".into(),
                tile_uuid: req.tile_uuid,
                user_uuid: *user,
                other_user_uuid: other,
                other_user_email: req.email.clone(),
                extra: Extra::new(),
            },
        })
    }

    pub fn revoke_share(&mut self, user: &Uuid16, req: &ShareRequest, now: u64) -> Result<()> {
        self.known_user(user)?;
        self.owned_tag(user, &req.tile_uuid)?;
        let other = self.user_by_email(&req.email)?;
        let removed = self
            .tags
            .get_mut(&req.tile_uuid)
            .expect("checked")
            .shared_uuids
            .remove(&other);
        if !removed {
            return Err(ServerError::NotFound(format!("share with {}", req.email)));
        }
        if self.config.fresh_key_on_transfer {
            self.rotate_key(&req.tile_uuid, now);
        }
        Ok(())
    }

    pub fn list_tiles(&self, user: &Uuid16) -> Result<TileListResponse> {
        self.known_user(user)?;
        let tiles = self
            .tags
            .values()
            .filter_map(|t| {
                let shared = if t.owner_uuid == *user {
                    false
                } else if t.shared_uuids.contains(user) {
                    true
                } else {
                    return None;
                };
                Some(TileListEntry {
                    tile_uuid: t.tile_id,
                    name: t.name.clone(),
                    auth_key: t.auth_key,
                    shared,
                    activation_timestamp: t.activation_time,
                })
            })
            .collect();
        Ok(TileListResponse { tiles })
    }

    // -----------------------------------------------------------------------
    // Routing

    pub fn handle_at(&mut self, now: u64, req: &ApiRequest) -> ApiResponse {
        match self.route(now, req) {
            Ok((status, body)) => ApiResponse { status, body },
            Err(e) => ApiResponse {
                status: e.status(),
                body: serde_json::to_string(&ErrorBody { error: e.to_string() }).expect("error body"),
            },
        }
    }

    fn route(&mut self, now: u64, req: &ApiRequest) -> Result<(u16, String)> {
        let (path, query) = req.path.split_once('?').unwrap_or((&req.path, ""));
        let segs: Vec<&str> = path.trim_matches('/').split('/').collect();
        let header_user = || -> Result<Uuid16> {
            let raw = req.user_uuid.as_deref().ok_or(ServerError::Unauthorized)?;
            Uuid16::from_hex(raw).map_err(|_| ServerError::Unauthorized)
        };
        let path_user = |raw: &str| -> Result<Uuid16> {
            let u = Uuid16::from_hex(raw).map_err(|_| ServerError::Unauthorized)?;
            if header_user()? != u {
                return Err(ServerError::Unauthorized);
            }
            Ok(u)
        };
        let body = || req.body.as_deref().unwrap_or("");
        let ok = |v: String| Ok((200, v));

        use Method::*;
        match (req.method, segs.as_slice()) {
            (Post, ["api", "v1", "users"]) => {
                let r = self.create_user(&wire::decode(body())?)?;
                ok(wire::encode(&r)?)
            }
            (Post, ["api", "v1", "users", uuid, "verify_email"]) => {
                let u = path_user(uuid)?;
                let r: VerifyEmailRequest = wire::decode(body())?;
                self.verify_email(&u, &r.code)?;
                ok("{}".into())
            }
            (Post, ["api", "v1", "users", uuid, "anti_theft"]) => {
                let u = path_user(uuid)?;
                let r: AntiTheftRequest = wire::decode(body())?;
                self.enable_anti_theft(&u, r.identity_document)?;
                ok("{}".into())
            }
            (Get, ["api", "v1", "users", uuid, "tiles"]) => {
                let u = path_user(uuid)?;
                ok(wire::encode(&self.list_tiles(&u)?)?)
            }
            (Delete, ["api", "v1", "users", uuid]) => {
                let u = path_user(uuid)?;
                let r: DeletionRequest = wire::decode(body())?;
                let resp = self.delete_user(&u, &r.password)?;
                Ok((202, wire::encode(&resp)?))
            }
            (Post, ["api", "v1", "tiles", "generate_tileUUID"]) => {
                let r = self.generate_tile_uuid(&wire::decode(body())?)?;
                ok(wire::encode(&r)?)
            }
            (Post, ["api", "v1", "tiles", "activate"]) => {
                let u = header_user()?;
                let r = self.establish_auth_key(&wire::decode(body())?, &u, now)?;
                ok(wire::encode(&r)?)
            }
            (Post, ["api", "v1", "tiles", "location", "update"]) => {
                let u = header_user()?;
                self.ingest_location_update(wire::decode(body())?, &u, now)?;
                ok("{}".into())
            }
            (Get, ["api", "v1", "tiles", "location", "history", tile]) => {
                let u = header_user()?;
                let tile = TileId::from_hex(tile).map_err(|_| ServerError::Denied)?;
                ok(wire::encode(&self.history(&tile, &u)?)?)
            }
            (Post, ["api", "v1", "tiles", "transfer"]) => {
                let u = header_user()?;
                self.transfer(&u, &wire::decode(body())?, now)?;
                ok("{}".into())
            }
            (Post, ["api", "v1", "tiles", "shares"]) => {
                let u = header_user()?;
                ok(wire::encode(&self.add_share(&u, &wire::decode(body())?)?)?)
            }
            (Delete, ["api", "v1", "tiles", "shares"]) => {
                let u = header_user()?;
                self.revoke_share(&u, &wire::decode(body())?, now)?;
                ok("{}".into())
            }
            (Post, ["api", "v1", "scan_secure"]) => {
                let u = header_user()?;
                self.known_user(&u)?;
                let r: ScanSecureRequest = wire::decode(body())?;
                ok(wire::encode(&self.filter_scan(&r))?)
            }
            (Get, ["api", "v1", "community", "stats"]) => {
                let mut lat = None;
                let mut lon = None;
                for (k, v) in form_urlencoded::parse(query.as_bytes()) {
                    match &*k {
                        "latitude" => lat = v.parse::<f64>().ok(),
                        "longitude" => lon = v.parse::<f64>().ok(),
                        _ => {}
                    }
                }
                let (Some(lat), Some(lon)) = (lat, lon) else {
                    return Err(ServerError::BadRequest("latitude and longitude query parameters required".into()));
                };
                let querier = match &req.user_uuid {
                    Some(_) => Some(header_user()?),
                    None => None,
                };
                ok(wire::encode(&self.community_stats(lat, lon, querier.as_ref(), now)?)?)
            }
            (Get, ["mock", "mailbox", email]) => ok(wire::encode(&self.mailbox(email)?)?),
            _ => Err(ServerError::NotFound(format!("{} {}", req.method, path))),
        }
    }
}
