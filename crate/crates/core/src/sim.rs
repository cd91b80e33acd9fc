//! Deterministic simulated world: virtual clock, flat-plane geometry with a
//! lat/long projection, a disk-range BLE medium and a JSON-lines event log.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::crypto::{self, MacAddr, PrivateId, PrivateIdSeed, TileId};
use crate::tag::Tag;
use crate::wire::{Advertisement, ServiceUuid};

pub type SimRng = ChaCha20Rng;

pub const METERS_PER_MILE: f64 = 1609.344;
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;
pub const DEFAULT_RANGE_M: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("negative time step {0}s")]
    NegativeStep(i64),
    #[error("scan duration must be positive, got {0}s")]
    EmptyScan(u64),
    #[error("non-finite position ({0}, {1})")]
    NonFinite(f64, f64),
    #[error("unknown emitter {0}")]
    UnknownEmitter(usize),
}

/// Derives an independent child RNG so per-actor streams stay stable when
/// unrelated actors are added.
pub fn child_rng(seed: u64, label: &str) -> SimRng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
    }
    SimRng::seed_from_u64(seed ^ h.rotate_left(17))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimClock {
    now: u64,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(now: u64) -> Self {
        Self { now }
    }

    /// Seconds since the simulation epoch.
    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn advance(&mut self, dt: i64) -> Result<(), SimError> {
        if dt < 0 {
            return Err(SimError::NegativeStep(dt));
        }
        self.now += dt as u64;
        Ok(())
    }

    /// Moves to `t` if it lies in the future; never goes backwards.
    pub fn advance_to(&mut self, t: u64) {
        self.now = self.now.max(t);
    }
}

/// Point on the simulation plane, in meters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Result<Self, SimError> {
        if x.is_finite() && y.is_finite() {
            Ok(Self { x, y })
        } else {
            Err(SimError::NonFinite(x, y))
        }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub latitude: f64,
    pub longitude: f64,
}

/// Great-circle distance in miles.
pub fn haversine_miles(a: GeoPoint, b: GeoPoint) -> f64 {
    let (la1, la2) = (a.latitude.to_radians(), b.latitude.to_radians());
    let dlat = la2 - la1;
    let dlon = (b.longitude - a.longitude).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + la1.cos() * la2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().asin() / METERS_PER_MILE
}

/// Equirectangular projection around a fixed origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoAnchor {
    pub latitude: f64,
    pub longitude: f64,
}

impl Default for GeoAnchor {
    fn default() -> Self {
        Self {
            latitude: 33.7756,
            longitude: -84.3963,
        }
    }
}

impl GeoAnchor {
    pub fn to_geo(&self, p: Position) -> GeoPoint {
        let lat = self.latitude + (p.y / EARTH_RADIUS_M).to_degrees();
        let lon = self.longitude
            + (p.x / (EARTH_RADIUS_M * self.latitude.to_radians().cos())).to_degrees();
        GeoPoint {
            latitude: lat,
            longitude: lon,
        }
    }

    pub fn to_plane(&self, g: GeoPoint) -> Position {
        Position {
            x: (g.longitude - self.longitude).to_radians()
                * EARTH_RADIUS_M
                * self.latitude.to_radians().cos(),
            y: (g.latitude - self.latitude).to_radians() * EARTH_RADIUS_M,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EmitterId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CarrierId(pub usize);

/// Where an emitter is: pinned, or riding along with a carrier (a phone).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Anchor {
    Fixed(Position),
    Carried(CarrierId),
}

/// What a non-tag transmitter broadcasts.
#[derive(Debug, Clone, PartialEq)]
pub enum BeaconPayload {
    /// Pre-activation advertisement with no payload.
    Unactivated,
    /// Same identifier every time.
    Fixed(PrivateId),
    /// Follows a tag schedule from a known seed.
    Schedule { seed: PrivateIdSeed, activation: u64 },
}

/// Attacker-controlled transmitter.
#[derive(Debug, Clone, PartialEq)]
pub struct Beacon {
    pub mac: MacAddr,
    pub payload: BeaconPayload,
    pub active: bool,
}

impl Beacon {
    pub fn advertise(&self, now: u64) -> Option<Advertisement> {
        if !self.active {
            return None;
        }
        Some(match &self.payload {
            BeaconPayload::Unactivated => Advertisement::pre_activation(self.mac, now),
            BeaconPayload::Fixed(id) => Advertisement::activated(self.mac, *id, now),
            BeaconPayload::Schedule { seed, activation } => {
                let ctr = crypto::schedule_counter(*activation, now).unwrap_or(0);
                Advertisement::activated(self.mac, crypto::private_id(seed, ctr).ok()?, now)
            }
        })
    }
}

#[derive(Debug)]
pub enum Emitter {
    Tag(Box<Tag>),
    Beacon(Beacon),
}

#[derive(Debug)]
struct Slot {
    label: String,
    anchor: Anchor,
    emitter: Emitter,
}

/// An advertisement together with which emitter really sent it. Adversary
/// code only ever sees `adv`; `emitter` is ground truth for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub emitter: EmitterId,
    pub adv: Advertisement,
}

#[derive(Debug)]
pub struct BleMedium {
    pub range_m: f64,
    /// Per-advertisement drop probability; 0 disables loss.
    pub loss_probability: f64,
    loss_rng: SimRng,
    slots: Vec<Slot>,
    carriers: Vec<Position>,
}

impl BleMedium {
    pub fn new(range_m: f64, seed: u64) -> Self {
        Self {
            range_m,
            loss_probability: 0.0,
            loss_rng: child_rng(seed, "ble-loss"),
            slots: Vec::new(),
            carriers: Vec::new(),
        }
    }

    pub fn add_carrier(&mut self, at: Position) -> CarrierId {
        self.carriers.push(at);
        CarrierId(self.carriers.len() - 1)
    }

    pub fn move_carrier(&mut self, id: CarrierId, to: Position) {
        self.carriers[id.0] = to;
    }

    pub fn carrier_position(&self, id: CarrierId) -> Position {
        self.carriers[id.0]
    }

    pub fn add_emitter(&mut self, label: impl Into<String>, anchor: Anchor, emitter: Emitter) -> EmitterId {
        self.slots.push(Slot {
            label: label.into(),
            anchor,
            emitter,
        });
        EmitterId(self.slots.len() - 1)
    }

    pub fn label(&self, id: EmitterId) -> &str {
        &self.slots[id.0].label
    }

    pub fn set_anchor(&mut self, id: EmitterId, anchor: Anchor) {
        self.slots[id.0].anchor = anchor;
    }

    pub fn anchor(&self, id: EmitterId) -> Anchor {
        self.slots[id.0].anchor
    }

    pub fn position(&self, id: EmitterId) -> Position {
        match self.slots[id.0].anchor {
            Anchor::Fixed(p) => p,
            Anchor::Carried(c) => self.carriers[c.0],
        }
    }

    pub fn emitter_ids(&self) -> impl Iterator<Item = EmitterId> {
        (0..self.slots.len()).map(EmitterId)
    }

    pub fn tag(&self, id: EmitterId) -> Option<&Tag> {
        match &self.slots.get(id.0)?.emitter {
            Emitter::Tag(t) => Some(t),
            Emitter::Beacon(_) => None,
        }
    }

    pub fn tag_mut(&mut self, id: EmitterId) -> Option<&mut Tag> {
        match &mut self.slots.get_mut(id.0)?.emitter {
            Emitter::Tag(t) => Some(t),
            Emitter::Beacon(_) => None,
        }
    }

    pub fn beacon_mut(&mut self, id: EmitterId) -> Option<&mut Beacon> {
        match &mut self.slots.get_mut(id.0)?.emitter {
            Emitter::Beacon(b) => Some(b),
            Emitter::Tag(_) => None,
        }
    }

    pub fn find_tag(&self, tile_id: &TileId) -> Option<EmitterId> {
        self.emitter_ids()
            .find(|&id| self.tag(id).is_some_and(|t| t.tile_id() == *tile_id))
    }

    pub fn in_range(&self, id: EmitterId, at: Position) -> bool {
        self.position(id).distance(&at) <= self.range_m
    }

    /// Everything in range of `at` matching `filter`, sampled at `now`.
    pub fn scan_observations(
        &mut self,
        now: u64,
        at: Position,
        duration: u64,
        filter: Option<ServiceUuid>,
    ) -> Result<Vec<Observation>, SimError> {
        if duration == 0 {
            return Err(SimError::EmptyScan(duration));
        }
        let mut out = Vec::new();
        for idx in 0..self.slots.len() {
            let id = EmitterId(idx);
            if !self.in_range(id, at) {
                continue;
            }
            let adv = match &self.slots[idx].emitter {
                Emitter::Tag(t) => Some(t.advertise(now)),
                Emitter::Beacon(b) => b.advertise(now),
            };
            let Some(adv) = adv else { continue };
            if filter.is_some_and(|f| f != adv.service_uuid) {
                continue;
            }
            if self.loss_probability > 0.0 && self.loss_rng.random::<f64>() < self.loss_probability {
                continue;
            }
            out.push(Observation { emitter: id, adv });
        }
        Ok(out)
    }

    pub fn scan(
        &mut self,
        now: u64,
        at: Position,
        duration: u64,
        filter: Option<ServiceUuid>,
    ) -> Result<Vec<Advertisement>, SimError> {
        Ok(self
            .scan_observations(now, at, duration, filter)?
            .into_iter()
            .map(|o| o.adv)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: u64,
    pub actor: String,
    pub event: String,
    pub payload: Value,
}

/// Append-only scenario log, rendered as JSON lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub entries: Vec<Event>,
}

impl EventLog {
    pub fn record(&mut self, t: u64, actor: &str, event: &str, payload: Value) {
        self.entries.push(Event {
            t,
            actor: actor.to_owned(),
            event: event.to_owned(),
            payload,
        });
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { entries })
    }
}

/// Clock, radio medium, projection and log bundled for one scenario.
#[derive(Debug)]
pub struct World {
    pub clock: SimClock,
    pub medium: BleMedium,
    pub anchor: GeoAnchor,
    pub log: EventLog,
    pub seed: u64,
}

impl World {
    pub fn new(seed: u64) -> Self {
        Self {
            clock: SimClock::new(),
            medium: BleMedium::new(DEFAULT_RANGE_M, seed),
            anchor: GeoAnchor::default(),
            log: EventLog::default(),
            seed,
        }
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn advance(&mut self, dt: i64) -> Result<(), SimError> {
        self.clock.advance(dt)
    }

    pub fn rng_for(&self, label: &str) -> SimRng {
        child_rng(self.seed, label)
    }

    pub fn log(&mut self, actor: &str, event: &str, payload: Value) {
        let t = self.clock.now();
        self.log.record(t, actor, event, payload);
    }
}
