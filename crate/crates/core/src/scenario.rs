//! Declarative scenarios: a versioned JSON document describing actors, their
//! movement, a timed script and the attacks to score at the end. Execution is
//! single-threaded over the simulated clock and fully determined by the seed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::api::{ApiRequest, LocalTransport, Method, Transport, WireCapture};
use crate::attacks::{self, ActorTrack, AttackVerdict, Capture, CaptureLog, CaptureTruth, Outcome, SearchArea, SurveillanceTruth};
use crate::client::{Client, MockIdentityVerifier, ScanReport, DELETE_CONFIRMATION};
use crate::crypto::{self, MacAddr, PrivateId, TileId};
use crate::server::{vendor_interim_key, Server, ServerConfig, Snapshot};
use crate::sim::{Anchor, Beacon, BeaconPayload, Emitter, EmitterId, EventLog, GeoPoint, Position, World};
use crate::tag::{Tag, TagConfig};
use crate::wire::{self, CommunityStatsResponse, ServiceUuid};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("scenario reference error: {0}")]
    Reference(String),
    #[error("scenario setup failed: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Toggles {
    #[serde(default)]
    pub randomized_mac: bool,
    #[serde(default)]
    pub fresh_key_on_transfer: bool,
    #[serde(default = "yes")]
    pub tag_ctr_check: bool,
}

fn yes() -> bool {
    true
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            randomized_mac: false,
            fresh_key_on_transfer: false,
            tag_ctr_check: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BleSettings {
    #[serde(default = "default_range")]
    pub range_m: f64,
    #[serde(default)]
    pub loss_probability: f64,
}

fn default_range() -> f64 {
    crate::sim::DEFAULT_RANGE_M
}

impl Default for BleSettings {
    fn default() -> Self {
        Self {
            range_m: default_range(),
            loss_probability: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: u64,
    pub at: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Route {
    pub waypoints: Vec<Waypoint>,
    /// Loop the route with this period.
    #[serde(default)]
    pub repeat_secs: Option<u64>,
}

impl Route {
    pub fn position_at(&self, t: u64) -> Position {
        let t = match self.repeat_secs {
            Some(p) if p > 0 => t % p,
            _ => t,
        };
        let w = &self.waypoints;
        let pos = |a: [f64; 2]| Position { x: a[0], y: a[1] };
        if t <= w[0].t {
            return pos(w[0].at);
        }
        for pair in w.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if t <= b.t {
                let f = (t - a.t) as f64 / (b.t - a.t) as f64;
                return Position {
                    x: a.at[0] + (b.at[0] - a.at[0]) * f,
                    y: a.at[1] + (b.at[1] - a.at[1]) * f,
                };
            }
        }
        pos(w[w.len() - 1].at)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Motion {
    Static([f64; 2]),
    Route(Route),
    CarriedBy(String),
}

impl Default for Motion {
    fn default() -> Self {
        Motion::Static([0.0, 0.0])
    }
}

fn default_model() -> String {
    "TILE 24.00".into()
}
fn default_firmware() -> String {
    "48.04.16.0".into()
}
fn default_hardware() -> String {
    "24.00".into()
}
fn default_password() -> String {
    "correct-horse".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActorKind {
    Phone {
        #[serde(default)]
        email: Option<String>,
        #[serde(default = "default_password")]
        password: String,
    },
    Tag {
        mac: MacAddr,
        #[serde(default = "default_model")]
        model: String,
        #[serde(default = "default_firmware")]
        firmware: String,
        #[serde(default = "default_hardware")]
        hardware: String,
    },
    Sniffer,
    Beacon {
        mac: MacAddr,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: ActorKind,
    #[serde(default)]
    pub motion: Motion,
}

fn default_true() -> bool {
    true
}
fn default_confirmation() -> String {
    DELETE_CONFIRMATION.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Register {
        #[serde(default = "default_true")]
        skip_email_verification: bool,
    },
    Activate {
        tag: String,
        #[serde(default)]
        name: Option<String>,
    },
    ReportConnected,
    FinderCycle,
    ScanAndSecure {
        /// Absolute waypoints; empty means a 60 m walk east from here.
        #[serde(default)]
        path: Vec<[f64; 2]>,
    },
    SetModifiedApp {
        enabled: bool,
    },
    EnableAntiTheft,
    Share {
        tag: String,
        with: String,
    },
    RevokeShare {
        tag: String,
        with: String,
    },
    Transfer {
        tag: String,
        to: String,
    },
    Sync,
    DeleteAccount {
        #[serde(default = "default_confirmation")]
        confirmation: String,
    },
    CommunityStats,
    QueryHistory {
        tag: String,
    },
    Ring {
        tag: String,
    },
    Sniff,
    /// Adversary phone programs a beacon with a schedule derived from a key
    /// it holds for `tag`.
    BroadcastDerived {
        beacon: String,
        tag: String,
    },
    /// Rebroadcast the latest advertisement a sniffer captured (optionally
    /// only from `mac`).
    ReplayCaptured {
        beacon: String,
        sniffer: String,
        #[serde(default)]
        mac: Option<MacAddr>,
    },
    StopBeacon {
        beacon: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub at: u64,
    pub actor: String,
    #[serde(flatten)]
    pub action: Action,
    #[serde(default)]
    pub every_secs: Option<u64>,
    #[serde(default)]
    pub until: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "attack", deny_unknown_fields)]
pub enum AttackSpec {
    #[serde(rename = "a1")]
    A1 { actors: Vec<String>, cadence_secs: u64 },
    #[serde(rename = "a2")]
    A2 {
        target: String,
        center: [f64; 2],
        half_width_miles: f64,
        budget: usize,
    },
    #[serde(rename = "a3")]
    A3 { sniffers: Vec<String> },
    #[serde(rename = "a4")]
    A4 { sniffers: Vec<String> },
    #[serde(rename = "a5")]
    A5 {
        adversary: String,
        tag: String,
        sniffers: Vec<String>,
        after: u64,
    },
    #[serde(rename = "a6")]
    A6 { victim: String, adversary: String, tag: String },
    #[serde(rename = "a7")]
    A7 { victim: String, beacon: String, tag: String },
    #[serde(rename = "a8")]
    A8 { scanner: String, anti_theft_tag: String },
}

impl AttackSpec {
    pub fn id(&self) -> &'static str {
        match self {
            AttackSpec::A1 { .. } => "a1",
            AttackSpec::A2 { .. } => "a2",
            AttackSpec::A3 { .. } => "a3",
            AttackSpec::A4 { .. } => "a4",
            AttackSpec::A5 { .. } => "a5",
            AttackSpec::A6 { .. } => "a6",
            AttackSpec::A7 { .. } => "a7",
            AttackSpec::A8 { .. } => "a8",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertion {
    pub attack: String,
    pub expect: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    pub duration_secs: u64,
    #[serde(default)]
    pub toggles: Toggles,
    #[serde(default)]
    pub ble: BleSettings,
    pub actors: Vec<ActorSpec>,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub assertions: Vec<Assertion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Phone,
    Tag,
    Sniffer,
    Beacon,
}

impl ActorKind {
    fn kind(&self) -> Kind {
        match self {
            ActorKind::Phone { .. } => Kind::Phone,
            ActorKind::Tag { .. } => Kind::Tag,
            ActorKind::Sniffer => Kind::Sniffer,
            ActorKind::Beacon { .. } => Kind::Beacon,
        }
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    fn kinds(&self) -> BTreeMap<&str, Kind> {
        self.actors.iter().map(|a| (a.id.as_str(), a.kind.kind())).collect()
    }

    /// Structural checks serde cannot express: versions, unique ids and
    /// every cross-reference resolving to an actor of the right kind.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Reference(m));
        if self.version != SCENARIO_VERSION {
            return Err(ScenarioError::Schema {
                path: "version".into(),
                message: format!("unsupported version {}, expected {SCENARIO_VERSION}", self.version),
            });
        }
        let kinds = self.kinds();
        if kinds.len() != self.actors.len() {
            return bad("duplicate actor id".into());
        }
        let need = |id: &str, k: Kind, ctx: &str| -> Result<(), ScenarioError> {
            match kinds.get(id) {
                Some(got) if *got == k => Ok(()),
                Some(got) => Err(ScenarioError::Reference(format!("{ctx}: actor {id:?} is a {got:?}, expected {k:?}"))),
                None => Err(ScenarioError::Reference(format!("{ctx}: undefined actor {id:?}"))),
            }
        };
        for a in &self.actors {
            match &a.motion {
                Motion::CarriedBy(p) => {
                    if !matches!(a.kind.kind(), Kind::Tag | Kind::Beacon) {
                        return bad(format!("actor {:?}: only tags and beacons can be carried", a.id));
                    }
                    need(p, Kind::Phone, &format!("actor {:?} carried_by", a.id))?;
                }
                Motion::Route(r) => {
                    if r.waypoints.is_empty() || r.waypoints.windows(2).any(|w| w[1].t <= w[0].t) {
                        return bad(format!("actor {:?}: route waypoints must be non-empty and strictly increasing in time", a.id));
                    }
                }
                Motion::Static(_) => {}
            }
            if let ActorKind::Tag { model, firmware, hardware, .. } = &a.kind {
                for (v, check) in [
                    (model, wire::check_model as fn(&str) -> Result<(), String>),
                    (firmware, wire::check_firmware),
                    (hardware, wire::check_hardware),
                ] {
                    check(v).map_err(|m| ScenarioError::Schema { path: format!("actors.{}", a.id), message: m })?;
                }
            }
        }
        for (i, e) in self.script.iter().enumerate() {
            let ctx = format!("script[{i}]");
            if e.every_secs == Some(0) {
                return bad(format!("{ctx}: every_secs must be positive"));
            }
            let actor_kind = match &e.action {
                Action::Sniff => Kind::Sniffer,
                _ => Kind::Phone,
            };
            need(&e.actor, actor_kind, &ctx)?;
            match &e.action {
                Action::Activate { tag, .. } | Action::QueryHistory { tag } | Action::Ring { tag } => need(tag, Kind::Tag, &ctx)?,
                Action::Share { tag, with } | Action::RevokeShare { tag, with } => {
                    need(tag, Kind::Tag, &ctx)?;
                    need(with, Kind::Phone, &ctx)?;
                }
                Action::Transfer { tag, to } => {
                    need(tag, Kind::Tag, &ctx)?;
                    need(to, Kind::Phone, &ctx)?;
                }
                Action::BroadcastDerived { beacon, tag } => {
                    need(beacon, Kind::Beacon, &ctx)?;
                    need(tag, Kind::Tag, &ctx)?;
                }
                Action::ReplayCaptured { beacon, sniffer, .. } => {
                    need(beacon, Kind::Beacon, &ctx)?;
                    need(sniffer, Kind::Sniffer, &ctx)?;
                }
                Action::StopBeacon { beacon } => need(beacon, Kind::Beacon, &ctx)?,
                _ => {}
            }
        }
        let mut attack_ids = BTreeSet::new();
        for (i, a) in self.attacks.iter().enumerate() {
            let ctx = format!("attacks[{i}]");
            attack_ids.insert(a.id());
            match a {
                AttackSpec::A1 { actors, cadence_secs } => {
                    if *cadence_secs == 0 {
                        return bad(format!("{ctx}: cadence_secs must be positive"));
                    }
                    for x in actors {
                        need(x, Kind::Phone, &ctx)?;
                    }
                }
                AttackSpec::A2 { target, .. } => need(target, Kind::Phone, &ctx)?,
                AttackSpec::A3 { sniffers } | AttackSpec::A4 { sniffers } => {
                    for x in sniffers {
                        need(x, Kind::Sniffer, &ctx)?;
                    }
                }
                AttackSpec::A5 { adversary, tag, sniffers, .. } => {
                    need(adversary, Kind::Phone, &ctx)?;
                    need(tag, Kind::Tag, &ctx)?;
                    for x in sniffers {
                        need(x, Kind::Sniffer, &ctx)?;
                    }
                }
                AttackSpec::A6 { victim, adversary, tag } => {
                    need(victim, Kind::Phone, &ctx)?;
                    need(adversary, Kind::Phone, &ctx)?;
                    need(tag, Kind::Tag, &ctx)?;
                }
                AttackSpec::A7 { victim, beacon, tag } => {
                    need(victim, Kind::Phone, &ctx)?;
                    need(beacon, Kind::Beacon, &ctx)?;
                    need(tag, Kind::Tag, &ctx)?;
                }
                AttackSpec::A8 { scanner, anti_theft_tag } => {
                    need(scanner, Kind::Phone, &ctx)?;
                    need(anti_theft_tag, Kind::Tag, &ctx)?;
                }
            }
        }
        for a in &self.assertions {
            if !attack_ids.contains(a.attack.as_str()) {
                return bad(format!("assertion references attack {:?} that is not run", a.attack));
            }
        }
        Ok(())
    }

    /// Script occurrences in execution order.
    fn occurrences(&self) -> Vec<(u64, usize)> {
        let mut out = Vec::new();
        for (i, e) in self.script.iter().enumerate() {
            match e.every_secs {
                None => out.push((e.at, i)),
                Some(step) => {
                    let end = e.until.unwrap_or(self.duration_secs).min(self.duration_secs);
                    let mut t = e.at;
                    while t <= end {
                        out.push((t, i));
                        t += step;
                    }
                }
            }
        }
        out.sort();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub attack: String,
    pub expect: Outcome,
    pub actual: Option<Outcome>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub toggles: Toggles,
    pub verdicts: Vec<AttackVerdict>,
    pub assertions: Vec<AssertionResult>,
    /// Script steps that returned an error (often deliberately).
    pub action_errors: usize,
    pub log_sha256: String,
    pub snapshot_sha256: String,
    pub report_hash: String,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }

    pub fn verdict(&self, attack: &str) -> Option<&AttackVerdict> {
        self.verdicts.iter().find(|v| v.attack == attack)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub report: Report,
    pub log: EventLog,
    pub snapshot: Snapshot,
    pub wire: WireCapture,
    pub captures: BTreeMap<String, CaptureLog>,
}

fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

struct Runner<'s> {
    scenario: &'s Scenario,
    world: World,
    server: Server,
    wire: WireCapture,
    clients: BTreeMap<String, Client>,
    emitters: BTreeMap<String, EmitterId>,
    captures: BTreeMap<String, (CaptureLog, CaptureTruth)>,
    scans: BTreeMap<String, Vec<(bool, ScanReport)>>,
    replays: BTreeMap<String, Capture>,
    report_times: BTreeMap<String, Vec<u64>>,
    finder_seen: BTreeSet<MacAddr>,
    errors: usize,
}

impl<'s> Runner<'s> {
    fn new(scenario: &'s Scenario, seed: u64) -> Result<Self, ScenarioError> {
        let mut world = World::new(seed);
        world.medium.range_m = scenario.ble.range_m;
        world.medium.loss_probability = scenario.ble.loss_probability;
        let server = Server::new(ServerConfig {
            seed,
            fresh_key_on_transfer: scenario.toggles.fresh_key_on_transfer,
            ..ServerConfig::default()
        });
        let mut r = Self {
            scenario,
            world,
            server,
            wire: WireCapture::default(),
            clients: BTreeMap::new(),
            emitters: BTreeMap::new(),
            captures: BTreeMap::new(),
            scans: BTreeMap::new(),
            replays: BTreeMap::new(),
            report_times: BTreeMap::new(),
            finder_seen: BTreeSet::new(),
            errors: 0,
        };
        for a in &scenario.actors {
            if let ActorKind::Phone { .. } = a.kind {
                let at = r.position_of(&a.id, 0);
                let c = Client::new(&a.id, &mut r.world, at);
                r.clients.insert(a.id.clone(), c);
            }
        }
        let tag_config = TagConfig {
            randomized_mac: scenario.toggles.randomized_mac,
            ctr_check: scenario.toggles.tag_ctr_check,
            ..TagConfig::default()
        };
        for a in &scenario.actors {
            let emitter = match &a.kind {
                ActorKind::Tag { mac, model, firmware, hardware } => {
                    let interim = vendor_interim_key(&model[..4]);
                    let rng = r.world.rng_for(&format!("tag:{}", a.id));
                    let tag = Tag::new(*mac, model, firmware, hardware, interim, tag_config, rng)
                        .map_err(|e| ScenarioError::Setup(e.to_string()))?;
                    Emitter::Tag(Box::new(tag))
                }
                ActorKind::Beacon { mac } => Emitter::Beacon(Beacon {
                    mac: *mac,
                    payload: BeaconPayload::Unactivated,
                    active: false,
                }),
                _ => continue,
            };
            let anchor = match &a.motion {
                Motion::CarriedBy(p) => Anchor::Carried(r.clients[p].carrier()),
                _ => Anchor::Fixed(r.position_of(&a.id, 0)),
            };
            let id = r.world.medium.add_emitter(&a.id, anchor, emitter);
            r.emitters.insert(a.id.clone(), id);
        }
        for a in &scenario.actors {
            if let ActorKind::Sniffer = a.kind {
                r.captures.insert(a.id.clone(), Default::default());
            }
        }
        Ok(r)
    }

    fn spec(&self, id: &str) -> &'s ActorSpec {
        self.scenario.actors.iter().find(|a| a.id == id).expect("validated reference")
    }

    /// Scripted (ground-truth) position of any actor at `t`.
    fn position_of(&self, id: &str, t: u64) -> Position {
        match &self.spec(id).motion {
            Motion::Static(p) => Position { x: p[0], y: p[1] },
            Motion::Route(r) => r.position_at(t),
            Motion::CarriedBy(p) => self.position_of(p, t),
        }
    }

    fn sync_positions(&mut self) {
        let now = self.world.now();
        for a in &self.scenario.actors {
            if matches!(a.motion, Motion::CarriedBy(_)) {
                continue;
            }
            let p = self.position_of(&a.id, now);
            if let Some(c) = self.clients.get(&a.id) {
                self.world.medium.move_carrier(c.carrier(), p);
            } else if let Some(e) = self.emitters.get(&a.id) {
                self.world.medium.set_anchor(*e, Anchor::Fixed(p));
            }
        }
    }

    fn tile_of(&self, tag: &str) -> TileId {
        self.world.medium.tag(self.emitters[tag]).expect("tag actor").tile_id()
    }

    fn email_of(&self, phone: &str) -> String {
        match &self.spec(phone).kind {
            ActorKind::Phone { email: Some(e), .. } => e.clone(),
            _ => format!("{phone}@example.test"),
        }
    }

    fn password_of(&self, phone: &str) -> String {
        match &self.spec(phone).kind {
            ActorKind::Phone { password, .. } => password.clone(),
            _ => default_password(),
        }
    }

    fn run_script(&mut self) {
        for (t, idx) in self.scenario.occurrences() {
            self.world.clock.advance_to(t);
            self.sync_positions();
            let entry = &self.scenario.script[idx];
            if let Err(e) = self.execute(entry) {
                self.errors += 1;
                let action = serde_json::to_value(&entry.action).expect("action serializes");
                self.world.log(&entry.actor, "error", json!({ "action": action["action"], "error": e }));
            }
        }
        self.world.clock.advance_to(self.scenario.duration_secs);
    }

    fn execute(&mut self, entry: &ScriptEntry) -> Result<(), String> {
        let actor = entry.actor.as_str();
        let now = self.world.now();
        if let Action::Sniff = entry.action {
            let at = self.position_of(actor, now);
            let (log, truth) = self.captures.get_mut(actor).expect("sniffer");
            let before = log.entries.len();
            attacks::sniff(&mut self.world.medium, now, at, log, truth);
            let n = log.entries.len() - before;
            self.world.log(actor, "sniff", json!({ "captured": n }));
            return Ok(());
        }
        match &entry.action {
            Action::BroadcastDerived { beacon, tag } => return self.broadcast_derived(actor, beacon, tag),
            Action::ReplayCaptured { beacon, sniffer, mac } => return self.replay_captured(actor, beacon, sniffer, *mac),
            Action::StopBeacon { beacon } => {
                let e = self.emitters[beacon.as_str()];
                self.world.medium.beacon_mut(e).expect("beacon").active = false;
                self.world.log(actor, "beacon_stopped", json!({ "beacon": beacon }));
                return Ok(());
            }
            Action::FinderCycle => {
                let pos = self.position_of(actor, now);
                let own: BTreeSet<TileId> = self.clients[actor].tiles().map(|t| t.tile_id).collect();
                let medium = &self.world.medium;
                for id in medium.emitter_ids() {
                    if let Some(tag) = medium.tag(id) {
                        if tag.is_activated() && medium.in_range(id, pos) && !own.contains(&tag.tile_id()) {
                            self.finder_seen.insert(tag.static_mac());
                        }
                    }
                }
                self.report_times.entry(actor.to_owned()).or_default().push(now);
            }
            Action::ReportConnected => {
                self.report_times.entry(actor.to_owned()).or_default().push(now);
            }
            _ => {}
        }

        let email = self.email_of(actor);
        let password = self.password_of(actor);
        let tile = |tag: &str| self.tile_of(tag);
        let lookup_tile = match &entry.action {
            Action::Activate { .. } => None,
            Action::QueryHistory { tag } | Action::Ring { tag } | Action::Share { tag, .. } | Action::RevokeShare { tag, .. } | Action::Transfer { tag, .. } => {
                Some(tile(tag))
            }
            _ => None,
        };
        let other_email = match &entry.action {
            Action::Share { with, .. } | Action::RevokeShare { with, .. } => Some(self.email_of(with)),
            Action::Transfer { to, .. } => Some(self.email_of(to)),
            _ => None,
        };
        let emitter = match &entry.action {
            Action::Activate { tag, .. } => Some(self.emitters[tag.as_str()]),
            _ => None,
        };

        let Runner { world, server, wire, clients, scans, .. } = self;
        let client = clients.get_mut(actor).expect("phone");
        let mut transport = LocalTransport::recording(server, wire);
        let t = &mut transport;
        let e = |e: crate::client::ClientError| e.to_string();
        match &entry.action {
            Action::Register { skip_email_verification } => {
                client.register(world, t, &email, &password, *skip_email_verification).map_err(e)?;
            }
            Action::Activate { tag, name } => {
                let name = name.clone().unwrap_or_else(|| tag.clone());
                client.activate_tag(world, t, emitter.expect("set"), &name).map_err(e)?;
            }
            Action::ReportConnected => {
                client.report_connected(world, t).map_err(e)?;
            }
            Action::FinderCycle => {
                client.finder_cycle(world, t).map_err(e)?;
            }
            Action::ScanAndSecure { path } => {
                let here = client.position(world);
                let path: Vec<Position> = if path.is_empty() {
                    vec![here, Position { x: here.x + 60.0, y: here.y }]
                } else {
                    path.iter().map(|p| Position { x: p[0], y: p[1] }).collect()
                };
                let modified = client.modified_app;
                let rep = client.scan_and_secure(world, t, &path).map_err(e)?;
                scans.entry(actor.to_owned()).or_default().push((modified, rep));
            }
            Action::SetModifiedApp { enabled } => {
                client.modified_app = *enabled;
                world.log(actor, "modified_app", json!({ "enabled": enabled }));
            }
            Action::EnableAntiTheft => {
                client.enable_anti_theft(world, t, &mut MockIdentityVerifier::default()).map_err(e)?;
            }
            Action::Share { .. } => {
                client
                    .share(world, t, &lookup_tile.expect("set"), &other_email.expect("set"))
                    .map_err(e)?;
            }
            Action::RevokeShare { .. } => {
                client
                    .revoke_share(world, t, &lookup_tile.expect("set"), &other_email.expect("set"))
                    .map_err(e)?;
            }
            Action::Transfer { .. } => {
                client
                    .transfer(world, t, &lookup_tile.expect("set"), &other_email.expect("set"))
                    .map_err(e)?;
            }
            Action::Sync => client.sync_tiles(world, t).map_err(e)?,
            Action::DeleteAccount { confirmation } => {
                client.delete_account(world, t, &password, confirmation).map_err(e)?;
            }
            Action::CommunityStats => {
                client.community_stats(world, t).map_err(e)?;
            }
            Action::QueryHistory { .. } => {
                client.query_history(world, t, &lookup_tile.expect("set")).map_err(e)?;
            }
            Action::Ring { .. } => {
                client.ring(world, &lookup_tile.expect("set")).map_err(e)?;
            }
            Action::Sniff | Action::BroadcastDerived { .. } | Action::ReplayCaptured { .. } | Action::StopBeacon { .. } => {
                unreachable!("handled above")
            }
        }
        Ok(())
    }

    fn broadcast_derived(&mut self, actor: &str, beacon: &str, tag: &str) -> Result<(), String> {
        let tile = self.tile_of(tag);
        let keys = self.clients[actor].cached_keys(&tile);
        let Some(&(key, activation)) = keys.iter().max_by_key(|(_, act)| *act) else {
            return Err(format!("{actor} holds no key for {tag}"));
        };
        let seed = crypto::derive_private_id_seed(&key, &tile);
        let e = self.emitters[beacon];
        let b = self.world.medium.beacon_mut(e).expect("beacon");
        b.payload = BeaconPayload::Schedule { seed, activation };
        b.active = true;
        self.world.log(actor, "broadcast_derived", json!({ "beacon": beacon }));
        Ok(())
    }

    fn replay_captured(&mut self, actor: &str, beacon: &str, sniffer: &str, mac: Option<MacAddr>) -> Result<(), String> {
        let (log, _) = &self.captures[sniffer];
        let Some(cap) = log.entries.iter().rev().find(|c| mac.is_none_or_eq(c.adv.mac)).cloned() else {
            return Err(format!("{sniffer} captured nothing to replay"));
        };
        let e = self.emitters[beacon];
        let b = self.world.medium.beacon_mut(e).expect("beacon");
        b.mac = cap.adv.mac;
        b.payload = match cap.adv.service_uuid {
            ServiceUuid::Feed => BeaconPayload::Fixed(cap.adv.payload.expect("FEED carries an id")),
            ServiceUuid::Feec => BeaconPayload::Unactivated,
        };
        b.active = true;
        self.world.log(
            actor,
            "replay",
            json!({ "beacon": beacon, "captured_at": cap.t, "service": cap.adv.service_uuid }),
        );
        self.replays.insert(beacon.to_owned(), cap);
        Ok(())
    }

    fn merged_capture(&self, sniffers: &[String]) -> (CaptureLog, CaptureTruth) {
        let mut rows: Vec<(u64, usize, Capture, EmitterId)> = Vec::new();
        for (k, s) in sniffers.iter().enumerate() {
            let (log, truth) = &self.captures[s.as_str()];
            for (c, e) in log.entries.iter().zip(&truth.emitters) {
                rows.push((c.t, k, c.clone(), *e));
            }
        }
        rows.sort_by_key(|r| (r.0, r.1));
        let mut log = CaptureLog::default();
        let mut truth = CaptureTruth::default();
        for (_, _, c, e) in rows {
            log.entries.push(c);
            truth.emitters.push(e);
        }
        (log, truth)
    }

    /// Was the tag within radio range of the scanning phone at any pass?
    fn tag_near_scan(&self, tag: &str, scan: &ScanReport) -> bool {
        scan.positions.iter().enumerate().any(|(i, p)| {
            let t = scan.started_at + i as u64 * crate::client::SCAN_PASS_SECS;
            self.position_of(tag, t).distance(p) <= self.world.medium.range_m
        })
    }

    fn last_scan(&self, phone: &str, modified: Option<bool>) -> Option<&ScanReport> {
        self.scans
            .get(phone)?
            .iter()
            .rev()
            .find(|(m, _)| modified.is_none_or_eq(*m))
            .map(|(_, r)| r)
    }

    fn evaluate(&mut self, spec: &AttackSpec) -> AttackVerdict {
        match spec {
            AttackSpec::A1 { actors, cadence_secs } => {
                let mut tracks = Vec::new();
                for a in actors {
                    let Some(user) = self.clients[a.as_str()].user_uuid() else { continue };
                    let samples = self
                        .report_times
                        .get(a.as_str())
                        .map(|ts| ts.iter().map(|&t| (t, self.world.anchor.to_geo(self.position_of(a, t)))).collect())
                        .unwrap_or_default();
                    tracks.push(ActorTrack { label: a.clone(), user_uuid: user, samples });
                }
                let truth = SurveillanceTruth {
                    cadence_secs: *cadence_secs,
                    actors: tracks,
                    finder_observed_macs: self.finder_seen.clone(),
                };
                attacks::a1_server_surveillance(&self.server.snapshot(), &truth)
            }
            AttackSpec::A2 { target, center, half_width_miles, budget } => {
                let now = self.world.now();
                let c = self.world.anchor.to_geo(Position { x: center[0], y: center[1] });
                let area = SearchArea { center: c, half_width_miles: *half_width_miles };
                let mut transport = LocalTransport::recording(&mut self.server, &mut self.wire);
                let mut oracle = |q: GeoPoint| -> u64 {
                    let path = format!("/api/v1/community/stats?latitude={}&longitude={}", q.latitude, q.longitude);
                    let resp = transport.send(now, ApiRequest::new(Method::Get, path));
                    wire::decode::<CommunityStatsResponse>(&resp.body).map_or(0, |r| r.result.tilers_around)
                };
                let est = attacks::a2_community_deanonymize(&mut oracle, area, *budget);
                let truth = self.world.anchor.to_geo(self.position_of(target, now));
                attacks::a2_verdict(&est, truth, *budget)
            }
            AttackSpec::A3 { sniffers } => {
                let (log, truth) = self.merged_capture(sniffers);
                attacks::a3_verdict(&log, &truth)
            }
            AttackSpec::A4 { sniffers } => {
                let (log, truth) = self.merged_capture(sniffers);
                attacks::a4_verdict(&log, &truth)
            }
            AttackSpec::A5 { adversary, tag, sniffers, after } => {
                let tile = self.tile_of(tag);
                let keys: Vec<_> = self.clients[adversary.as_str()].cached_keys(&tile).into_iter().map(|(k, _)| k).collect();
                let (log, truth) = self.merged_capture(sniffers);
                let matched = attacks::a5_track_with_compromised_key(&keys, &tile, &log);
                attacks::a5_verdict(&matched, &log, &truth, self.emitters[tag.as_str()], *after)
            }
            AttackSpec::A6 { victim, adversary, tag } => {
                let tile = self.tile_of(tag);
                let scan = self.last_scan(victim, None);
                let mut framed = BTreeSet::new();
                if let Some(s) = scan {
                    for (k, act) in self.clients[adversary.as_str()].cached_keys(&tile) {
                        framed.extend(attacks::derived_ids(&k, &tile, act, s.started_at.max(act), s.finished_at));
                    }
                }
                let near = scan.is_some_and(|s| self.tag_near_scan(tag, s));
                attacks::a6_verdict(scan, &framed, near)
            }
            AttackSpec::A7 { victim, beacon, tag } => {
                let scan = self.last_scan(victim, None);
                let live: Option<PrivateId> = scan.and_then(|s| {
                    self.world.medium.tag(self.emitters[tag.as_str()]).and_then(|t| t.advertise(s.started_at).private_id())
                });
                let near = scan.is_some_and(|s| self.tag_near_scan(tag, s));
                attacks::a7_verdict(scan, self.replays.get(beacon.as_str()), live, near)
            }
            AttackSpec::A8 { scanner, anti_theft_tag } => {
                let tile = self.tile_of(anti_theft_tag);
                let ids: BTreeSet<PrivateId> = match self.server.tag(&tile) {
                    Some(rec) if rec.anti_theft => {
                        crypto::full_schedule(&crypto::derive_private_id_seed(&rec.auth_key, &tile)).into_iter().collect()
                    }
                    _ => BTreeSet::new(),
                };
                attacks::a8_verdict(&self.wire, self.last_scan(scanner, Some(false)), self.last_scan(scanner, Some(true)), &ids)
            }
        }
    }
}

trait OptEq<T> {
    fn is_none_or_eq(&self, v: T) -> bool;
}

impl<T: PartialEq> OptEq<T> for Option<T> {
    fn is_none_or_eq(&self, v: T) -> bool {
        self.as_ref().map_or(true, |x| *x == v)
    }
}

/// Runs a scenario to completion. `seed` overrides the file's seed.
pub fn run(scenario: &Scenario, seed: Option<u64>) -> Result<RunOutput, ScenarioError> {
    scenario.validate()?;
    let seed = seed.unwrap_or(scenario.seed);
    let mut r = Runner::new(scenario, seed)?;
    r.run_script();
    let verdicts: Vec<AttackVerdict> = scenario.attacks.iter().map(|a| r.evaluate(a)).collect();
    for v in &verdicts {
        r.world.log("adversary", "verdict", json!({ "attack": v.attack, "outcome": v.outcome }));
    }
    let assertions = scenario
        .assertions
        .iter()
        .map(|a| {
            let actual = verdicts.iter().find(|v| v.attack == a.attack).map(|v| v.outcome);
            AssertionResult {
                attack: a.attack.clone(),
                expect: a.expect,
                actual,
                pass: actual == Some(a.expect),
            }
        })
        .collect();
    let snapshot = r.server.snapshot();
    let mut report = Report {
        scenario: scenario.name.clone(),
        seed,
        toggles: scenario.toggles,
        verdicts,
        assertions,
        action_errors: r.errors,
        log_sha256: sha256_hex(r.world.log.to_jsonl().as_bytes()),
        snapshot_sha256: sha256_hex(snapshot.to_json().as_bytes()),
        report_hash: String::new(),
    };
    report.report_hash = sha256_hex(serde_json::to_string(&report).expect("report serializes").as_bytes());
    let captures = r.captures.into_iter().map(|(k, (log, _))| (k, log)).collect();
    Ok(RunOutput {
        report,
        log: r.world.log,
        snapshot,
        wire: r.wire,
        captures,
    })
}

/// Scenario files shipped with the crate, by file stem.
pub const BUNDLED: &[(&str, &str)] = &[
    ("antitheft-circumvention", include_str!("../scenarios/antitheft-circumvention.json")),
    ("community-deanonymization", include_str!("../scenarios/community-deanonymization.json")),
    ("cycle-fingerprint", include_str!("../scenarios/cycle-fingerprint.json")),
    ("cycle-fingerprint-short-control", include_str!("../scenarios/cycle-fingerprint-short-control.json")),
    ("derive-replay-framing", include_str!("../scenarios/derive-replay-framing.json")),
    ("replay-framing", include_str!("../scenarios/replay-framing.json")),
    ("revoked-sharer-tracking", include_str!("../scenarios/revoked-sharer-tracking.json")),
    ("revoked-sharer-fresh-key-control", include_str!("../scenarios/revoked-sharer-fresh-key-control.json")),
    ("static-mac-linking", include_str!("../scenarios/static-mac-linking.json")),
    ("surveillance-day", include_str!("../scenarios/surveillance-day.json")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// The bundled scenario demonstrating `attack`.
pub fn bundled_for_attack(attack: &str) -> Option<&'static str> {
    let name = match attack {
        "a1" => "surveillance-day",
        "a2" => "community-deanonymization",
        "a3" => "static-mac-linking",
        "a4" => "cycle-fingerprint",
        "a5" => "revoked-sharer-tracking",
        "a6" => "derive-replay-framing",
        "a7" => "replay-framing",
        "a8" => "antitheft-circumvention",
        _ => return None,
    };
    bundled(name)
}
