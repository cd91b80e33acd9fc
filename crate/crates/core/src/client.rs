//! Phone app emulator: account setup, tag activation, owner and finder
//! location reporting, history, Scan and Secure, Anti-Theft enrollment,
//! sharing/transfer and deletion. Every call goes through a [`Transport`].

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::RngCore;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::api::{ApiRequest, Method, Transport};
use crate::crypto::{
    self, AuthKey, AuthTriplet, PrivateId, RandA, TagKey, TileId, ToaToken, TripletMode, Uuid16,
    OWNER_AUTH_MESSAGE,
};
use crate::server::MailboxMessage;
use crate::sim::{CarrierId, EmitterId, Position, SimRng, World};
use crate::tag::{self, TagError, TagEvent, TagResponse, RING_COMMAND};
use crate::wire::{
    self, ActivationRequest, ActivationResponse, AdvertisedServiceData, AntiTheftRequest,
    ClientData, CommunityStatsResponse, ConnectedAuthData, DeletionRequest, DeletionResponse,
    ErrorBody, Extra, GenerateTileUuidRequest, GenerateTileUuidResponse, HistoryPoint,
    HistoryResponse, IdentityDocument, Location, LocationUpdate, RegistrationRequest,
    RegistrationResponse, ScanSecureRequest, ScanSecureResponse, ServiceUuid, ShareRequest,
    SharingResponse, TileData, TileEntry, TileListResponse, TransferRequest, UpdateRecord,
    Validate, VerifyEmailRequest, WireError, SCAN_PASSES,
};

pub const DELETE_CONFIRMATION: &str = "DELETE";
pub const SCAN_PASS_SECS: u64 = 100;
pub const MIN_SCAN_STEP_M: f64 = 10.0;
/// Length of one background finder scan window.
pub const FINDER_SCAN_SECS: u64 = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("not registered")]
    NotRegistered,
    #[error("registration failed: {0}")]
    RegistrationFailed(String),
    #[error("tag not in range")]
    NoTag,
    #[error("activation failed: {0}")]
    ActivationFailed(String),
    #[error("authorization denied")]
    AuthorizationDenied,
    #[error("Scan and Secure requires moving at least {MIN_SCAN_STEP_M} m between scans")]
    MotionRequired,
    #[error("identity verification failed: {0}")]
    EnrollmentFailed(String),
    #[error("deletion not confirmed")]
    ConfirmationRefused,
    #[error("server error {status}: {message}")]
    Server { status: u16, message: String },
    #[error(transparent)]
    Tag(#[from] TagError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// External identity-verification provider.
pub trait IdentityVerifier {
    fn verify(&mut self, email: &str) -> Result<IdentityDocument, String>;
}

/// Approves everyone unless told to fail.
#[derive(Debug, Clone, Default)]
pub struct MockIdentityVerifier {
    pub fail: bool,
}

impl IdentityVerifier for MockIdentityVerifier {
    fn verify(&mut self, email: &str) -> Result<IdentityDocument, String> {
        if self.fail {
            return Err("document rejected".into());
        }
        Ok(IdentityDocument {
            provider: "mock-verifier".into(),
            document_id: hex::encode(&Sha256::digest(email.as_bytes())[..8]),
            live_photos: 3,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnownTile {
    pub tile_id: TileId,
    pub name: String,
    pub auth_key: AuthKey,
    pub activation_time: u64,
    pub shared: bool,
}

/// What one Scan and Secure run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub started_at: u64,
    pub finished_at: u64,
    pub positions: Vec<Position>,
    pub known: Vec<String>,
    pub request: ScanSecureRequest,
    pub response: ScanSecureResponse,
    /// Unknown ids shown to the user with the number of passes they
    /// appeared in.
    pub displayed: Vec<(PrivateId, u8)>,
}

impl ScanReport {
    pub fn displays(&self, id: &PrivateId) -> bool {
        self.displayed.iter().any(|(d, _)| d == id)
    }

    pub fn count_of(&self, id: &PrivateId) -> u8 {
        self.displayed.iter().find(|(d, _)| d == id).map_or(0, |(_, c)| *c)
    }
}

/// An authenticated owner channel to a tag.
#[derive(Debug)]
struct OwnerChannel {
    emitter: EmitterId,
    tag_key: TagKey,
    next_ctr: u16,
}

#[derive(Debug)]
pub struct Client {
    pub label: String,
    client_uuid: Uuid16,
    user_uuid: Option<Uuid16>,
    email: Option<String>,
    phone_tile_uuid: Option<String>,
    tiles: BTreeMap<TileId, KnownTile>,
    /// Every (key, activation) ever learned per tile. Never cleared.
    key_cache: BTreeMap<TileId, BTreeSet<(AuthKey, u64)>>,
    /// Key the physical tag still runs, when the server has moved on.
    pending_rekeys: BTreeMap<TileId, AuthKey>,
    own_ids: HashMap<PrivateId, (TileId, AuthKey)>,
    own_keys: BTreeSet<(TileId, AuthKey)>,
    carrier: CarrierId,
    pub modified_app: bool,
    rng: SimRng,
    next_record_id: u64,
}

impl Client {
    pub fn new(label: &str, world: &mut World, at: Position) -> Self {
        let mut rng = world.rng_for(&format!("client:{label}"));
        let mut id = [0u8; 16];
        rng.fill_bytes(&mut id);
        Self {
            label: label.to_owned(),
            client_uuid: Uuid16(id),
            user_uuid: None,
            email: None,
            phone_tile_uuid: None,
            tiles: BTreeMap::new(),
            key_cache: BTreeMap::new(),
            pending_rekeys: BTreeMap::new(),
            own_ids: HashMap::new(),
            own_keys: BTreeSet::new(),
            carrier: world.medium.add_carrier(at),
            modified_app: false,
            rng,
            next_record_id: 1,
        }
    }

    pub fn client_uuid(&self) -> Uuid16 {
        self.client_uuid
    }

    pub fn user_uuid(&self) -> Option<Uuid16> {
        self.user_uuid
    }

    pub fn email(&self) -> Option<&str> {
        self.email.as_deref()
    }

    pub fn phone_tile_uuid(&self) -> Option<&str> {
        self.phone_tile_uuid.as_deref()
    }

    pub fn carrier(&self) -> CarrierId {
        self.carrier
    }

    pub fn position(&self, world: &World) -> Position {
        world.medium.carrier_position(self.carrier)
    }

    pub fn move_to(&self, world: &mut World, to: Position) {
        world.medium.move_carrier(self.carrier, to);
    }

    pub fn tiles(&self) -> impl Iterator<Item = &KnownTile> {
        self.tiles.values()
    }

    pub fn tile(&self, tile: &TileId) -> Option<&KnownTile> {
        self.tiles.get(tile)
    }

    /// Keys this phone has ever held for `tile`, including revoked ones.
    pub fn cached_keys(&self, tile: &TileId) -> Vec<(AuthKey, u64)> {
        self.key_cache.get(tile).map(|s| s.iter().copied().collect()).unwrap_or_default()
    }

    fn user(&self) -> Result<Uuid16, ClientError> {
        self.user_uuid.ok_or(ClientError::NotRegistered)
    }

    fn random<const N: usize>(&mut self) -> [u8; N] {
        let mut b = [0u8; N];
        self.rng.fill_bytes(&mut b);
        b
    }

    fn call<T: DeserializeOwned + Validate>(
        &self,
        transport: &mut dyn Transport,
        now: u64,
        method: Method,
        path: String,
        body: Option<String>,
    ) -> Result<T, ClientError> {
        let mut req = ApiRequest::new(method, path);
        if let Some(u) = self.user_uuid {
            req = req.user(u.to_hex());
        }
        req.body = body;
        let resp = transport.send(now, req);
        if !resp.is_success() {
            let message = wire::decode::<ErrorBody>(&resp.body)
                .map(|e| e.error)
                .unwrap_or(resp.body);
            return Err(ClientError::Server { status: resp.status, message });
        }
        Ok(wire::decode(&resp.body)?)
    }

    fn denied_on_403(e: ClientError) -> ClientError {
        match e {
            ClientError::Server { status: 403, .. } => ClientError::AuthorizationDenied,
            other => other,
        }
    }

    /// Brings the own-id table in line with the current keys, deriving
    /// schedules only for keys not already present.
    fn rebuild_own_ids(&mut self) {
        let mut wanted: BTreeSet<(TileId, AuthKey)> = self.tiles.values().map(|t| (t.tile_id, t.auth_key)).collect();
        wanted.extend(self.pending_rekeys.iter().map(|(t, k)| (*t, *k)));
        if self.own_keys.iter().any(|p| !wanted.contains(p)) {
            self.own_ids.retain(|_, v| wanted.contains(v));
        }
        for (tile, key) in wanted.difference(&self.own_keys) {
            let seed = crypto::derive_private_id_seed(key, tile);
            for id in crypto::full_schedule(&seed) {
                self.own_ids.insert(id, (*tile, *key));
            }
        }
        self.own_keys = wanted;
    }

    fn learn(&mut self, tile: KnownTile) {
        self.key_cache
            .entry(tile.tile_id)
            .or_default()
            .insert((tile.auth_key, tile.activation_time));
        self.tiles.insert(tile.tile_id, tile);
    }

    fn location(&self, world: &World) -> Location {
        let g = world.anchor.to_geo(self.position(world));
        Location {
            altitude: 0.0,
            latitude: g.latitude,
            longitude: g.longitude,
            timestamp: world.now(),
            extra: Extra::new(),
        }
    }

    fn client_entry(&self, now: u64, record_id: u64) -> TileEntry {
        TileEntry {
            data: TileData::ClientData(ClientData {
                tile_uuid: self.phone_tile_uuid.clone().unwrap_or_else(|| self.client_uuid.to_hex()),
            }),
            discovery_timestamp: now,
            record_id,
        }
    }

    // -----------------------------------------------------------------------
    // Account

    pub fn register(
        &mut self,
        world: &mut World,
        transport: &mut dyn Transport,
        email: &str,
        password: &str,
        skip_email_verification: bool,
    ) -> Result<Uuid16, ClientError> {
        if self.user_uuid.is_some() {
            return Err(ClientError::RegistrationFailed("already registered on this device".into()));
        }
        let now = world.now();
        let body = wire::encode(&RegistrationRequest {
            client_uuid: self.client_uuid,
            email: email.into(),
            password: password.into(),
        })?;
        let resp: RegistrationResponse = self
            .call(transport, now, Method::Post, "/api/v1/users".into(), Some(body))
            .map_err(|e| ClientError::RegistrationFailed(e.to_string()))?;
        self.user_uuid = Some(resp.user_uuid);
        self.email = Some(email.into());
        let user = resp.user_uuid.to_hex();

        if !skip_email_verification {
            let mail: MailboxMessage =
                self.call(transport, now, Method::Get, format!("/mock/mailbox/{email}"), None)?;
            let body = wire::encode(&VerifyEmailRequest { code: mail.code })?;
            let _: serde_json::Value =
                self.call(transport, now, Method::Post, format!("/api/v1/users/{user}/verify_email"), Some(body))?;
        }

        let body = wire::encode(&GenerateTileUuidRequest {
            tile_uuid: self.client_uuid.to_hex(),
            user_uuid: resp.user_uuid,
            tile_type: "PHONE".into(),
        })?;
        let phone: GenerateTileUuidResponse =
            self.call(transport, now, Method::Post, "/api/v1/tiles/generate_tileUUID".into(), Some(body))?;
        self.phone_tile_uuid = Some(phone.tile_uuid);
        world.log(&self.label, "registered", json!({ "user_uuid": user, "verified": !skip_email_verification }));
        Ok(resp.user_uuid)
    }

    /// Pulls the tile list and pushes any pending re-key to tags in range.
    pub fn sync_tiles(&mut self, world: &mut World, transport: &mut dyn Transport) -> Result<(), ClientError> {
        let user = self.user()?;
        let list: TileListResponse =
            self.call(transport, world.now(), Method::Get, format!("/api/v1/users/{}/tiles", user.to_hex()), None)?;
        let before: BTreeMap<TileId, AuthKey> = self.tiles.iter().map(|(k, v)| (*k, v.auth_key)).collect();
        let before_pending = self.pending_rekeys.len();
        self.tiles.clear();
        for e in list.tiles {
            if let Some(old) = before.get(&e.tile_uuid) {
                if *old != e.auth_key && !e.shared {
                    self.pending_rekeys.entry(e.tile_uuid).or_insert(*old);
                }
            }
            self.learn(KnownTile {
                tile_id: e.tile_uuid,
                name: e.name,
                auth_key: e.auth_key,
                activation_time: e.activation_timestamp,
                shared: e.shared,
            });
        }
        self.pending_rekeys.retain(|t, _| self.tiles.get(t).is_some_and(|k| !k.shared));
        let after: BTreeMap<TileId, AuthKey> = self.tiles.iter().map(|(k, v)| (*k, v.auth_key)).collect();
        let pending: Vec<TileId> = self.pending_rekeys.keys().copied().collect();
        for tile in pending {
            self.push_rekey(world, &tile)?;
        }
        if before != after || before_pending != self.pending_rekeys.len() {
            self.rebuild_own_ids();
        }
        Ok(())
    }

    fn push_rekey(&mut self, world: &mut World, tile: &TileId) -> Result<(), ClientError> {
        let old = self.pending_rekeys[tile];
        let Ok(mut ch) = self.open_channel_with(world, tile, &old) else {
            return Ok(());
        };
        let fresh = self.tiles[tile].clone();
        let msg = tag::rekey_message(&fresh.auth_key, fresh.activation_time);
        self.send_owner(world, &mut ch, &msg)?;
        self.pending_rekeys.remove(tile);
        world.log(&self.label, "rekey_pushed", json!({ "tile_id": tile.to_hex() }));
        Ok(())
    }

    fn find_tag_in_range(&self, world: &World, tile: &TileId) -> Option<EmitterId> {
        let id = world.medium.find_tag(tile)?;
        world.medium.in_range(id, self.position(world)).then_some(id)
    }

    fn open_channel_with(&mut self, world: &mut World, tile: &TileId, key: &AuthKey) -> Result<OwnerChannel, ClientError> {
        let emitter = self.find_tag_in_range(world, tile).ok_or(ClientError::NoTag)?;
        let rand_a = RandA(self.random());
        let prefix: [u8; 1] = self.random();
        let data: [u8; 2] = self.random();
        let toa = ToaToken(self.random());
        let tag = world.medium.tag_mut(emitter).ok_or(ClientError::NoTag)?;
        tag.open_channel(&prefix, &data, &toa, &rand_a)?;
        let tag_key = crypto::derive_tag_key(key, &rand_a, &data, &prefix, &toa, tag.config().channel_layout)
            .map_err(TagError::from)?;
        let mut ch = OwnerChannel { emitter, tag_key, next_ctr: 0 };
        match self.send_owner(world, &mut ch, &OWNER_AUTH_MESSAGE)? {
            TagResponse::Features { .. } => Ok(ch),
            _ => Err(ClientError::Tag(TagError::AuthReject)),
        }
    }

    fn send_owner(&mut self, world: &mut World, ch: &mut OwnerChannel, msg: &[u8]) -> Result<TagResponse, ClientError> {
        let mac = crypto::mac_message(&ch.tag_key, ch.next_ctr, msg).map_err(TagError::from)?;
        ch.next_ctr = ch.next_ctr.wrapping_add(1);
        let tag = world.medium.tag_mut(ch.emitter).ok_or(ClientError::NoTag)?;
        Ok(tag.receive_owner_message(msg, &mac)?)
    }

    /// Connects to an owned or shared tag and plays its song.
    pub fn ring(&mut self, world: &mut World, tile: &TileId) -> Result<TagEvent, ClientError> {
        let key = self.tiles.get(tile).ok_or(ClientError::AuthorizationDenied)?.auth_key;
        let mut ch = self.open_channel_with(world, tile, &key)?;
        match self.send_owner(world, &mut ch, &RING_COMMAND)? {
            TagResponse::Rang(ev) => {
                world.log(&self.label, "ring", json!({ "tile_id": tile.to_hex(), "characteristic": ev.characteristic }));
                Ok(ev)
            }
            _ => Err(ClientError::Tag(TagError::State("tag did not ring"))),
        }
    }

    // -----------------------------------------------------------------------
    // Activation

    pub fn activate_tag(
        &mut self,
        world: &mut World,
        transport: &mut dyn Transport,
        tag: EmitterId,
        name: &str,
    ) -> Result<TileId, ClientError> {
        self.activate_tag_with(world, transport, tag, name, &mut |_| {})
    }

    /// Activation with a hook that may alter the request before it is sent.
    pub fn activate_tag_with(
        &mut self,
        world: &mut World,
        transport: &mut dyn Transport,
        tag: EmitterId,
        name: &str,
        in_transit: &mut dyn FnMut(&mut ActivationRequest),
    ) -> Result<TileId, ClientError> {
        self.user()?;
        let now = world.now();
        let seen = world
            .medium
            .scan_observations(now, self.position(world), 1, Some(ServiceUuid::Feec))
            .map_err(|_| ClientError::NoTag)?;
        if !seen.iter().any(|o| o.emitter == tag) {
            return Err(ClientError::NoTag);
        }
        let rand_a = RandA(self.random());
        let t = world.medium.tag_mut(tag).ok_or(ClientError::NoTag)?;
        let tdi = t.read_tdi();
        let (rand_t, sres_t) = t.auth_challenge(&rand_a);
        let mut req = ActivationRequest {
            tile_uuid: tdi.tile_id,
            name: name.into(),
            rand_a,
            rand_t,
            sres_t,
            hw_version: tdi.hardware_version,
            model: tdi.model,
            firmware_version: tdi.firmware,
        };
        in_transit(&mut req);
        let body = wire::encode(&req)?;
        let resp: ActivationResponse = self
            .call(transport, now, Method::Post, "/api/v1/tiles/activate".into(), Some(body))
            .map_err(|e| ClientError::ActivationFailed(e.to_string()))?;
        world
            .medium
            .tag_mut(tag)
            .ok_or(ClientError::NoTag)?
            .complete_activation(&sres_t, now)?;
        self.learn(KnownTile {
            tile_id: resp.tile_uuid,
            name: name.into(),
            auth_key: resp.auth_key,
            activation_time: resp.activation_timestamp,
            shared: false,
        });
        self.rebuild_own_ids();
        world.log(&self.label, "activated", json!({ "tile_id": resp.tile_uuid.to_hex(), "name": name }));
        Ok(resp.tile_uuid)
    }

    // -----------------------------------------------------------------------
    // Location reporting

    fn upload(&mut self, world: &mut World, transport: &mut dyn Transport, tiles: Vec<TileEntry>, record_id: u64) -> Result<LocationUpdate, ClientError> {
        let now = world.now();
        let mut tiles = tiles;
        tiles.push(self.client_entry(now, record_id));
        let update = LocationUpdate {
            updates: vec![UpdateRecord {
                record_id,
                location: self.location(world),
                tiles,
            }],
        };
        let body = wire::encode(&update)?;
        let _: serde_json::Value =
            self.call(transport, now, Method::Post, "/api/v1/tiles/location/update".into(), Some(body))?;
        Ok(update)
    }

    /// Owner-mode upload for every tag currently connected.
    pub fn report_connected(&mut self, world: &mut World, transport: &mut dyn Transport) -> Result<Option<LocationUpdate>, ClientError> {
        self.sync_tiles(world, transport)?;
        let now = world.now();
        let record_id = self.next_record_id;
        let mut entries = Vec::new();
        let known: Vec<KnownTile> = self.tiles.values().cloned().collect();
        for kt in known {
            let Some(emitter) = self.find_tag_in_range(world, &kt.tile_id) else { continue };
            let rand_a = RandA(self.random());
            let tag = world.medium.tag_mut(emitter).expect("found tag");
            if !tag.is_activated() {
                continue;
            }
            let (rand_t, sres_t) = tag.auth_challenge(&rand_a);
            let triplet = AuthTriplet { rand_a, rand_t, sres_t };
            let key = self.pending_rekeys.get(&kt.tile_id).copied().unwrap_or(kt.auth_key);
            if !crypto::verify_triplet(&key.0, &triplet, &kt.tile_id, TripletMode::Session) {
                continue;
            }
            entries.push(TileEntry {
                data: TileData::ConnectedAuthData(ConnectedAuthData {
                    rand_a,
                    rand_t,
                    sres_t,
                    tile_uuid: kt.tile_id,
                }),
                discovery_timestamp: now,
                record_id,
            });
        }
        if entries.is_empty() {
            return Ok(None);
        }
        self.next_record_id += 1;
        let n = entries.len();
        let update = self.upload(world, transport, entries, record_id)?;
        world.log(&self.label, "report_connected", json!({ "tiles": n }));
        Ok(Some(update))
    }

    /// One background scan-and-upload pass.
    pub fn finder_cycle(&mut self, world: &mut World, transport: &mut dyn Transport) -> Result<Option<LocationUpdate>, ClientError> {
        self.sync_tiles(world, transport)?;
        let now = world.now();
        let seen = world
            .medium
            .scan(now, self.position(world), FINDER_SCAN_SECS, Some(ServiceUuid::Feed))
            .expect("positive scan window");
        let record_id = self.next_record_id;
        let mut dedup = BTreeSet::new();
        let mut entries = Vec::new();
        for adv in seen {
            let Some(id) = adv.private_id() else { continue };
            if self.own_ids.contains_key(&id) || !dedup.insert((adv.mac, id)) {
                continue;
            }
            entries.push(TileEntry {
                data: TileData::AdvertisedServiceData(AdvertisedServiceData {
                    mac_address: adv.mac,
                    payload_service_data: id,
                    extra: Extra::new(),
                }),
                discovery_timestamp: adv.emitted_at,
                record_id,
            });
        }
        if entries.is_empty() {
            return Ok(None);
        }
        self.next_record_id += 1;
        let n = entries.len();
        let update = self.upload(world, transport, entries, record_id)?;
        world.log(&self.label, "finder_upload", json!({ "sightings": n }));
        Ok(Some(update))
    }

    pub fn query_history(&mut self, world: &mut World, transport: &mut dyn Transport, tile: &TileId) -> Result<Vec<HistoryPoint>, ClientError> {
        let _ = self.user()?;
        let resp: HistoryResponse = self
            .call(transport, world.now(), Method::Get, format!("/api/v1/tiles/location/history/{}", tile.to_hex()), None)
            .map_err(Self::denied_on_403)?;
        world.log(&self.label, "history", json!({ "tile_id": tile.to_hex(), "points": resp.points.len() }));
        Ok(resp.points)
    }

    pub fn community_stats(&mut self, world: &mut World, transport: &mut dyn Transport) -> Result<u64, ClientError> {
        self.user()?;
        let g = world.anchor.to_geo(self.position(world));
        let path = format!("/api/v1/community/stats?latitude={}&longitude={}", g.latitude, g.longitude);
        let resp: CommunityStatsResponse = self.call(transport, world.now(), Method::Get, path, None)?;
        world.log(&self.label, "community_stats", json!({ "tilers_around": resp.result.tilers_around }));
        Ok(resp.result.tilers_around)
    }

    // -----------------------------------------------------------------------
    // Scan and Secure

    /// Six scans spaced along `motion_path`, 100 s apart. Advances the world
    /// clock by the full 600 s.
    pub fn scan_and_secure(
        &mut self,
        world: &mut World,
        transport: &mut dyn Transport,
        motion_path: &[Position],
    ) -> Result<ScanReport, ClientError> {
        self.user()?;
        let positions = sample_path(motion_path, SCAN_PASSES);
        if positions.windows(2).any(|w| w[0].distance(&w[1]) < MIN_SCAN_STEP_M) {
            return Err(ClientError::MotionRequired);
        }
        self.sync_tiles(world, transport)?;
        let started_at = world.now();
        let mut known = Vec::new();
        let mut passes: Vec<Vec<PrivateId>> = Vec::with_capacity(SCAN_PASSES);
        for &p in &positions {
            self.move_to(world, p);
            let seen = world
                .medium
                .scan(world.now(), p, SCAN_PASS_SECS, Some(ServiceUuid::Feed))
                .expect("positive scan window");
            let mut pass = Vec::new();
            for id in seen.iter().filter_map(|a| a.private_id()) {
                if let Some((tile, _)) = self.own_ids.get(&id) {
                    let name = self.tiles.get(tile).map_or_else(|| tile.to_hex(), |t| t.name.clone());
                    if !known.contains(&name) {
                        known.push(name);
                    }
                } else if !pass.contains(&id) {
                    pass.push(id);
                }
            }
            passes.push(pass);
            world.advance(SCAN_PASS_SECS as i64).expect("positive step");
        }
        let request = ScanSecureRequest::from_passes(passes)?;
        let response: ScanSecureResponse = self.call(
            transport,
            world.now(),
            Method::Post,
            "/api/v1/scan_secure".into(),
            Some(wire::encode(&request)?),
        )?;
        let shown = if self.modified_app { &request } else { &response };
        let displayed = appearance_counts(shown);
        world.log(
            &self.label,
            "scan_and_secure",
            json!({
                "known": known,
                "displayed": displayed.iter().map(|(id, c)| json!([id.to_hex(), c])).collect::<Vec<_>>(),
                "modified_app": self.modified_app,
            }),
        );
        Ok(ScanReport {
            started_at,
            finished_at: world.now(),
            positions,
            known,
            request,
            response,
            displayed,
        })
    }

    pub fn enable_anti_theft(
        &mut self,
        world: &mut World,
        transport: &mut dyn Transport,
        verifier: &mut dyn IdentityVerifier,
    ) -> Result<(), ClientError> {
        let user = self.user()?;
        let email = self.email.clone().unwrap_or_default();
        let doc = verifier.verify(&email).map_err(ClientError::EnrollmentFailed)?;
        let body = wire::encode(&AntiTheftRequest { identity_document: doc })?;
        let _: serde_json::Value = self.call(
            transport,
            world.now(),
            Method::Post,
            format!("/api/v1/users/{}/anti_theft", user.to_hex()),
            Some(body),
        )?;
        world.log(&self.label, "anti_theft_enabled", json!({}));
        Ok(())
    }

    // -----------------------------------------------------------------------
    // Transfer and sharing

    pub fn transfer(&mut self, world: &mut World, transport: &mut dyn Transport, tile: &TileId, recipient_email: &str) -> Result<(), ClientError> {
        self.user()?;
        let body = wire::encode(&TransferRequest { tile_uuid: *tile, recipient_email: recipient_email.into() })?;
        let _: serde_json::Value = self
            .call(transport, world.now(), Method::Post, "/api/v1/tiles/transfer".into(), Some(body))
            .map_err(Self::denied_on_403)?;
        world.log(&self.label, "transfer", json!({ "tile_id": tile.to_hex(), "to": recipient_email }));
        self.sync_tiles(world, transport)
    }

    pub fn share(&mut self, world: &mut World, transport: &mut dyn Transport, tile: &TileId, email: &str) -> Result<SharingResponse, ClientError> {
        self.user()?;
        let body = wire::encode(&ShareRequest { tile_uuid: *tile, email: email.into() })?;
        let resp: SharingResponse = self
            .call(transport, world.now(), Method::Post, "/api/v1/tiles/shares".into(), Some(body))
            .map_err(Self::denied_on_403)?;
        world.log(&self.label, "share", json!({ "tile_id": tile.to_hex(), "with": email }));
        Ok(resp)
    }

    pub fn revoke_share(&mut self, world: &mut World, transport: &mut dyn Transport, tile: &TileId, email: &str) -> Result<(), ClientError> {
        self.user()?;
        let body = wire::encode(&ShareRequest { tile_uuid: *tile, email: email.into() })?;
        let _: serde_json::Value = self
            .call(transport, world.now(), Method::Delete, "/api/v1/tiles/shares".into(), Some(body))
            .map_err(Self::denied_on_403)?;
        world.log(&self.label, "revoke_share", json!({ "tile_id": tile.to_hex(), "from": email }));
        self.sync_tiles(world, transport)
    }

    pub fn delete_account(
        &mut self,
        world: &mut World,
        transport: &mut dyn Transport,
        password: &str,
        confirmation: &str,
    ) -> Result<(), ClientError> {
        let user = self.user()?;
        if confirmation != DELETE_CONFIRMATION {
            return Err(ClientError::ConfirmationRefused);
        }
        let body = wire::encode(&DeletionRequest { password: password.into() })?;
        let _: DeletionResponse = self.call(
            transport,
            world.now(),
            Method::Delete,
            format!("/api/v1/users/{}", user.to_hex()),
            Some(body),
        )?;
        self.user_uuid = None;
        self.email = None;
        self.phone_tile_uuid = None;
        self.tiles.clear();
        self.pending_rekeys.clear();
        self.own_ids.clear();
        self.own_keys.clear();
        world.log(&self.label, "account_deleted", json!({}));
        Ok(())
    }
}

/// `n` points evenly spaced by arc length along a polyline.
pub fn sample_path(path: &[Position], n: usize) -> Vec<Position> {
    match path {
        [] => return vec![Position::default(); n],
        [p] => return vec![*p; n],
        _ => {}
    }
    let seg: Vec<f64> = path.windows(2).map(|w| w[0].distance(&w[1])).collect();
    let total: f64 = seg.iter().sum();
    (0..n)
        .map(|i| {
            let mut target = if n > 1 { total * i as f64 / (n - 1) as f64 } else { 0.0 };
            for (k, len) in seg.iter().enumerate() {
                if target <= *len || k == seg.len() - 1 {
                    let f = if *len > 0.0 { (target / len).min(1.0) } else { 0.0 };
                    let (a, b) = (path[k], path[k + 1]);
                    return Position {
                        x: a.x + (b.x - a.x) * f,
                        y: a.y + (b.y - a.y) * f,
                    };
                }
                target -= len;
            }
            unreachable!("loop returns on the last segment")
        })
        .collect()
}

/// Ids in first-appearance order with the number of passes containing them.
pub fn appearance_counts(lists: &ScanSecureRequest) -> Vec<(PrivateId, u8)> {
    let mut out: Vec<(PrivateId, u8)> = Vec::new();
    for pass in lists.passes() {
        for id in pass {
            match out.iter_mut().find(|(d, _)| d == id) {
                Some((_, c)) => *c += 1,
                None => out.push((*id, 1)),
            }
        }
    }
    out
}
