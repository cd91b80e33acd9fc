//! Executable adversaries. Each attack is split into the adversary's
//! computation, which sees only what its role could observe (radio captures,
//! a server snapshot, keys it legitimately held, its own scan results), and a
//! scoring step that compares the result with simulation ground truth.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::api::WireCapture;
use crate::client::ScanReport;
use crate::crypto::{self, AuthKey, MacAddr, PrivateId, TileId, Uuid16, CYCLE_SECS, ROTATION_PERIOD_SECS};
use crate::server::Snapshot;
use crate::sim::{haversine_miles, BleMedium, EmitterId, GeoAnchor, GeoPoint, Position, METERS_PER_MILE};
use crate::wire::{self, Advertisement, ScanSecureRequest, ServiceUuid, COMMUNITY_RADIUS_MILES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackVerdict {
    pub attack: String,
    pub outcome: Outcome,
    pub evidence: Value,
}

impl AttackVerdict {
    fn new(attack: &str, ok: bool, evidence: Value) -> Self {
        Self {
            attack: attack.into(),
            outcome: if ok { Outcome::Success } else { Outcome::Failure },
            evidence,
        }
    }

    pub fn success(&self) -> bool {
        self.outcome == Outcome::Success
    }
}

// ---------------------------------------------------------------------------
// Radio captures

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capture {
    pub t: u64,
    pub receiver: Position,
    pub adv: Advertisement,
}

/// What passive receivers recorded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptureLog {
    pub entries: Vec<Capture>,
}

/// Which emitter really produced each capture entry (same indexing).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CaptureTruth {
    pub emitters: Vec<EmitterId>,
}

impl CaptureLog {
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("capture serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { entries })
    }

    pub fn span(&self) -> u64 {
        let min = self.entries.iter().map(|e| e.t).min().unwrap_or(0);
        let max = self.entries.iter().map(|e| e.t).max().unwrap_or(0);
        max - min
    }
}

/// One passive scan at `at`, appended to `log`.
pub fn sniff(medium: &mut BleMedium, now: u64, at: Position, log: &mut CaptureLog, truth: &mut CaptureTruth) {
    let seen = medium.scan_observations(now, at, 1, None).expect("positive window");
    for o in seen {
        log.entries.push(Capture { t: now, receiver: at, adv: o.adv });
        truth.emitters.push(o.emitter);
    }
}

// ---------------------------------------------------------------------------
// a1: the provider reconstructs everyone's movements from its own store.

/// Every uploader's positions as stored, keyed by user.
pub fn reconstruct_tracks(snapshot: &Snapshot) -> BTreeMap<Uuid16, Vec<(u64, GeoPoint)>> {
    let mut out: BTreeMap<Uuid16, Vec<(u64, GeoPoint)>> = BTreeMap::new();
    for r in &snapshot.reports {
        for u in &r.update.updates {
            out.entry(r.uploader).or_default().push((
                u.location.timestamp,
                GeoPoint {
                    latitude: u.location.latitude,
                    longitude: u.location.longitude,
                },
            ));
        }
    }
    for v in out.values_mut() {
        v.sort_by_key(|(t, _)| *t);
    }
    out
}

/// MAC addresses carried in stored finder reports.
pub fn stored_macs(snapshot: &Snapshot) -> BTreeSet<MacAddr> {
    snapshot
        .reports
        .iter()
        .flat_map(|r| r.update.sightings().map(|(_, s)| s.mac_address))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorTrack {
    pub label: String,
    pub user_uuid: Uuid16,
    pub samples: Vec<(u64, GeoPoint)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurveillanceTruth {
    pub cadence_secs: u64,
    pub actors: Vec<ActorTrack>,
    /// Static MACs of tags that were in some finder's range at a finder scan.
    pub finder_observed_macs: BTreeSet<MacAddr>,
}

pub fn a1_server_surveillance(snapshot: &Snapshot, truth: &SurveillanceTruth) -> AttackVerdict {
    let tracks = reconstruct_tracks(snapshot);
    let macs = stored_macs(snapshot);
    let mut ok = !snapshot.reports.is_empty() && !truth.actors.is_empty();
    let mut per_actor = Vec::new();
    for actor in &truth.actors {
        let got: BTreeMap<u64, GeoPoint> = tracks
            .get(&actor.user_uuid)
            .map(|v| v.iter().copied().collect())
            .unwrap_or_default();
        let mut matched = 0usize;
        let mut max_err_m: f64 = 0.0;
        for (t, p) in &actor.samples {
            if let Some(q) = got.get(t) {
                matched += 1;
                max_err_m = max_err_m.max(haversine_miles(*p, *q) * METERS_PER_MILE);
            }
        }
        let times: Vec<u64> = got.keys().copied().collect();
        let max_gap = times.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0);
        let good = !actor.samples.is_empty()
            && matched == actor.samples.len()
            && max_err_m == 0.0
            && max_gap <= truth.cadence_secs;
        ok &= good;
        per_actor.push(json!({
            "actor": actor.label,
            "samples": actor.samples.len(),
            "reconstructed": matched,
            "max_error_m": max_err_m,
            "max_gap_secs": max_gap,
        }));
    }
    let missing: Vec<String> = truth
        .finder_observed_macs
        .difference(&macs)
        .map(|m| m.to_string())
        .collect();
    ok &= missing.is_empty();
    AttackVerdict::new(
        "a1",
        ok,
        json!({
            "reports": snapshot.reports.len(),
            "actors": per_actor,
            "macs_in_store": macs.len(),
            "finder_observed_macs": truth.finder_observed_macs.len(),
            "missing_macs": missing,
        }),
    )
}

// ---------------------------------------------------------------------------
// a2: locate a user from aggregate community counts.

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchArea {
    pub center: GeoPoint,
    pub half_width_miles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A2Estimate {
    pub estimate: Option<GeoPoint>,
    pub queries: usize,
    pub feasible_area_sq_miles: f64,
    /// Farthest feasible cell from the estimate.
    pub spread_miles: f64,
    pub budget_exhausted: bool,
}

pub const A2_CELL_MILES: f64 = 0.05;
const A2_GRID: usize = 11;
const A2_SLACK_MILES: f64 = 0.02;
const A2_DONE_RADIUS_MILES: f64 = 0.25;

/// Grid sweep followed by adaptive disk bisection. `oracle` returns the
/// community count at a point; only positive/zero transitions are used.
pub fn a2_community_deanonymize(
    oracle: &mut dyn FnMut(GeoPoint) -> u64,
    area: SearchArea,
    budget: usize,
) -> A2Estimate {
    let proj = GeoAnchor {
        latitude: area.center.latitude,
        longitude: area.center.longitude,
    };
    let to_geo = |x: f64, y: f64| proj.to_geo(Position { x: x * METERS_PER_MILE, y: y * METERS_PER_MILE });
    let w = area.half_width_miles;
    let n = (2.0 * w / A2_CELL_MILES).round() as usize;
    let mut cells: Vec<(f64, f64)> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            cells.push((
                -w + (i as f64 + 0.5) * A2_CELL_MILES,
                -w + (j as f64 + 0.5) * A2_CELL_MILES,
            ));
        }
    }
    let r = COMMUNITY_RADIUS_MILES;
    // A count above the sweep's floor means the target is inside the disk.
    let constrain = |cells: &mut Vec<(f64, f64)>, qx: f64, qy: f64, inside: bool| {
        cells.retain(|(x, y)| {
            let d = (x - qx).hypot(y - qy);
            if inside {
                d <= r + A2_SLACK_MILES
            } else {
                d >= r - A2_SLACK_MILES
            }
        });
    };

    let step = 2.0 * w / (A2_GRID - 1) as f64;
    let mut sweep = Vec::new();
    'grid: for i in 0..A2_GRID {
        for j in 0..A2_GRID {
            if sweep.len() >= budget {
                break 'grid;
            }
            let (qx, qy) = (-w + i as f64 * step, -w + j as f64 * step);
            sweep.push((qx, qy, oracle(to_geo(qx, qy))));
        }
    }
    let mut queries = sweep.len();
    let mut exhausted = queries >= budget;
    let floor = sweep.iter().map(|q| q.2).min().unwrap_or(0);
    for &(qx, qy, c) in &sweep {
        constrain(&mut cells, qx, qy, c > floor);
    }

    let centroid = |cells: &[(f64, f64)]| {
        let k = cells.len() as f64;
        let (sx, sy) = cells.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        (sx / k, sy / k)
    };
    while !exhausted && !cells.is_empty() {
        let (cx, cy) = centroid(&cells);
        let spread = cells.iter().map(|(x, y)| (x - cx).hypot(y - cy)).fold(0.0, f64::max);
        if spread <= A2_DONE_RADIUS_MILES {
            break;
        }
        // Pick the disk that splits the feasible set most evenly.
        let stride = (cells.len() / 2000).max(1);
        let sample: Vec<(f64, f64)> = cells.iter().step_by(stride).copied().collect();
        let mut best = (f64::MAX, cx, cy);
        for k in 0..32 {
            let ang = k as f64 * std::f64::consts::TAU / 32.0;
            for off in [r - spread / 2.0, r, r + spread / 2.0] {
                let (qx, qy) = (cx + off * ang.cos(), cy + off * ang.sin());
                let inside = sample.iter().filter(|(x, y)| (x - qx).hypot(y - qy) <= r).count();
                let imbalance = (inside as f64 / sample.len() as f64 - 0.5).abs();
                if imbalance < best.0 {
                    best = (imbalance, qx, qy);
                }
            }
        }
        if queries >= budget {
            exhausted = true;
            break;
        }
        queries += 1;
        let c = oracle(to_geo(best.1, best.2));
        constrain(&mut cells, best.1, best.2, c > floor);
    }
    let (estimate, spread_miles) = if cells.is_empty() {
        (None, f64::INFINITY)
    } else {
        let (x, y) = centroid(&cells);
        let spread = cells.iter().map(|(a, b)| (a - x).hypot(b - y)).fold(0.0, f64::max);
        (Some(to_geo(x, y)), spread)
    };
    A2Estimate {
        estimate,
        queries,
        feasible_area_sq_miles: cells.len() as f64 * A2_CELL_MILES * A2_CELL_MILES,
        spread_miles,
        budget_exhausted: exhausted,
    }
}

pub fn a2_verdict(est: &A2Estimate, truth: GeoPoint, budget: usize) -> AttackVerdict {
    let error = est.estimate.map(|e| haversine_miles(e, truth));
    // The adversary must also be confident: the whole feasible region has to
    // fit inside the error bar, not just happen to be centred on the target.
    let ok = error.is_some_and(|e| e < 1.0)
        && est.spread_miles < 1.0
        && est.queries <= budget
        && !est.budget_exhausted;
    AttackVerdict::new(
        "a2",
        ok,
        json!({
            "queries": est.queries,
            "budget": budget,
            "error_miles": error,
            "feasible_area_sq_miles": est.feasible_area_sq_miles,
            "spread_miles": est.spread_miles,
            "estimate": est.estimate,
            "budget_exhausted": est.budget_exhausted,
        }),
    )
}

// ---------------------------------------------------------------------------
// a3: link observations by MAC.

pub fn a3_link_by_static_mac(capture: &CaptureLog) -> BTreeMap<MacAddr, Vec<usize>> {
    let mut out: BTreeMap<MacAddr, Vec<usize>> = BTreeMap::new();
    for (i, c) in capture.entries.iter().enumerate() {
        out.entry(c.adv.mac).or_default().push(i);
    }
    out
}

fn partition_of(groups: impl IntoIterator<Item = Vec<usize>>) -> BTreeSet<BTreeSet<usize>> {
    groups.into_iter().map(|g| g.into_iter().collect()).collect()
}

fn truth_partition(truth: &CaptureTruth) -> BTreeMap<EmitterId, Vec<usize>> {
    let mut out: BTreeMap<EmitterId, Vec<usize>> = BTreeMap::new();
    for (i, e) in truth.emitters.iter().enumerate() {
        out.entry(*e).or_default().push(i);
    }
    out
}

pub fn a3_verdict(capture: &CaptureLog, truth: &CaptureTruth) -> AttackVerdict {
    let clusters = a3_link_by_static_mac(capture);
    let expected = truth_partition(truth);
    let false_merges = clusters
        .values()
        .filter(|c| c.iter().map(|&i| truth.emitters[i]).collect::<BTreeSet<_>>().len() > 1)
        .count();
    let splits = expected
        .values()
        .filter(|c| c.iter().map(|&i| capture.entries[i].adv.mac).collect::<BTreeSet<_>>().len() > 1)
        .count();
    let ids_per_cluster: Vec<usize> = clusters
        .values()
        .map(|c| c.iter().filter_map(|&i| capture.entries[i].adv.payload).collect::<BTreeSet<_>>().len())
        .collect();
    let exact = partition_of(clusters.values().cloned()) == partition_of(expected.values().cloned());
    AttackVerdict::new(
        "a3",
        exact && !capture.entries.is_empty(),
        json!({
            "observations": capture.entries.len(),
            "clusters": clusters.len(),
            "true_tags": expected.len(),
            "false_merges": false_merges,
            "false_splits": splits,
            "distinct_private_ids_per_cluster": ids_per_cluster,
        }),
    )
}

// ---------------------------------------------------------------------------
// a4: identifier-cycle fingerprinting.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleLinks {
    /// Capture index pairs whose identifiers recur one cycle apart.
    pub lag_links: Vec<(usize, usize)>,
    /// Linked groups (union of lag links and same-slot repeats).
    pub fingerprints: Vec<Vec<usize>>,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// `None` when the capture is shorter than one identifier cycle.
pub fn a4_fingerprint_by_cycle(capture: &CaptureLog) -> Option<CycleLinks> {
    if capture.span() + ROTATION_PERIOD_SECS <= CYCLE_SECS {
        return None;
    }
    let mut by_id: BTreeMap<PrivateId, Vec<usize>> = BTreeMap::new();
    for (i, c) in capture.entries.iter().enumerate() {
        if let Some(id) = c.adv.private_id() {
            by_id.entry(id).or_default().push(i);
        }
    }
    let mut parent: Vec<usize> = (0..capture.entries.len()).collect();
    let mut lag_links = Vec::new();
    for idxs in by_id.values() {
        for (a, &i) in idxs.iter().enumerate() {
            for &j in &idxs[a + 1..] {
                let (ti, tj) = (capture.entries[i].t, capture.entries[j].t);
                let dt = ti.abs_diff(tj);
                let lagged = dt.abs_diff(CYCLE_SECS) < ROTATION_PERIOD_SECS;
                if lagged {
                    lag_links.push((i, j));
                }
                if lagged || dt < ROTATION_PERIOD_SECS {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    parent[ri] = rj;
                }
            }
        }
    }
    let linked: BTreeSet<usize> = lag_links.iter().flat_map(|&(i, j)| [i, j]).collect();
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in linked {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    Some(CycleLinks {
        lag_links,
        fingerprints: groups.into_values().collect(),
    })
}

pub fn a4_verdict(capture: &CaptureLog, truth: &CaptureTruth) -> AttackVerdict {
    let Some(links) = a4_fingerprint_by_cycle(capture) else {
        return AttackVerdict {
            attack: "a4".into(),
            outcome: Outcome::Inconclusive,
            evidence: json!({ "span_secs": capture.span(), "cycle_secs": CYCLE_SECS }),
        };
    };
    let false_links = links
        .lag_links
        .iter()
        .filter(|&&(i, j)| truth.emitters[i] != truth.emitters[j])
        .count();
    let mut eligible = BTreeSet::new();
    for (e, idxs) in truth_partition(truth) {
        let ts: Vec<u64> = idxs.iter().map(|&i| capture.entries[i].t).collect();
        let span = ts.iter().max().unwrap_or(&0) - ts.iter().min().unwrap_or(&0);
        if span + ROTATION_PERIOD_SECS > CYCLE_SECS {
            eligible.insert(e);
        }
    }
    let reidentified: BTreeSet<EmitterId> = links.lag_links.iter().map(|&(i, _)| truth.emitters[i]).collect();
    let macs: BTreeSet<MacAddr> = capture.entries.iter().map(|c| c.adv.mac).collect();
    let ok = !eligible.is_empty() && eligible.is_subset(&reidentified) && false_links == 0;
    AttackVerdict::new(
        "a4",
        ok,
        json!({
            "span_secs": capture.span(),
            "lag_links": links.lag_links.len(),
            "fingerprints": links.fingerprints.len(),
            "eligible_tags": eligible.len(),
            "reidentified_tags": reidentified.len(),
            "false_links": false_links,
            "distinct_macs": macs.len(),
        }),
    )
}

// ---------------------------------------------------------------------------
// a5: follow a tag with a key obtained legitimately in the past.

pub fn a5_track_with_compromised_key(keys: &[AuthKey], tile: &TileId, capture: &CaptureLog) -> Vec<usize> {
    let mut ids: HashMap<PrivateId, ()> = HashMap::new();
    for k in keys {
        let seed = crypto::derive_private_id_seed(k, tile);
        ids.extend(crypto::full_schedule(&seed).into_iter().map(|i| (i, ())));
    }
    capture
        .entries
        .iter()
        .enumerate()
        .filter(|(_, c)| c.adv.private_id().is_some_and(|id| ids.contains_key(&id)))
        .map(|(i, _)| i)
        .collect()
}

pub fn a5_verdict(matched: &[usize], capture: &CaptureLog, truth: &CaptureTruth, victim: EmitterId, after: u64) -> AttackVerdict {
    let post: Vec<usize> = (0..capture.entries.len())
        .filter(|&i| truth.emitters[i] == victim && capture.entries[i].t > after)
        .collect();
    let matched: BTreeSet<usize> = matched.iter().copied().collect();
    let hit = post.iter().filter(|i| matched.contains(i)).count();
    let false_hits = matched.iter().filter(|&&i| truth.emitters[i] != victim).count();
    let track: Vec<&Capture> = post.iter().filter(|i| matched.contains(i)).map(|&i| &capture.entries[i]).collect();
    let sample = |c: &&Capture| json!([c.t, c.receiver]);
    AttackVerdict::new(
        "a5",
        !post.is_empty() && hit == post.len() && false_hits == 0,
        json!({
            "post_revocation_observations": post.len(),
            "reconstructed": hit,
            "fraction": if post.is_empty() { 0.0 } else { hit as f64 / post.len() as f64 },
            "false_matches": false_hits,
            "track_first": track.first().map(sample),
            "track_last": track.last().map(sample),
        }),
    )
}

// ---------------------------------------------------------------------------
// a6 / a7: make a victim's Scan and Secure report a tag that is not there.

/// Identifiers the adversary would broadcast during `[from, to]` given a key.
pub fn derived_ids(key: &AuthKey, tile: &TileId, activation: u64, from: u64, to: u64) -> BTreeSet<PrivateId> {
    let mut out = BTreeSet::new();
    let mut t = from - (from.saturating_sub(activation)) % ROTATION_PERIOD_SECS;
    while t <= to {
        if let Ok(id) = crypto::private_id_at(key, tile, activation, t.max(activation)) {
            out.insert(id);
        }
        t += ROTATION_PERIOD_SECS;
    }
    out
}

pub fn a6_verdict(scan: Option<&ScanReport>, framed: &BTreeSet<PrivateId>, genuine_tag_in_range: bool) -> AttackVerdict {
    let Some(scan) = scan else {
        return AttackVerdict::new("a6", false, json!({ "reason": "no victim scan" }));
    };
    let shown: Vec<Value> = scan
        .displayed
        .iter()
        .filter(|(id, _)| framed.contains(id))
        .map(|(id, c)| json!([id.to_hex(), c]))
        .collect();
    AttackVerdict::new(
        "a6",
        !shown.is_empty() && !genuine_tag_in_range,
        json!({
            "framed_ids_displayed": shown,
            "genuine_tag_in_range": genuine_tag_in_range,
            "scan_window": [scan.started_at, scan.finished_at],
        }),
    )
}

pub fn a7_verdict(
    scan: Option<&ScanReport>,
    replayed: Option<&Capture>,
    live_id_at_scan: Option<PrivateId>,
    genuine_tag_in_range: bool,
) -> AttackVerdict {
    let (Some(scan), Some(cap)) = (scan, replayed) else {
        return AttackVerdict::new("a7", false, json!({ "reason": "no victim scan or nothing replayed" }));
    };
    let id = cap.adv.private_id();
    let count = id.map_or(0, |id| scan.count_of(&id));
    AttackVerdict::new(
        "a7",
        count >= 1 && !genuine_tag_in_range,
        json!({
            "replayed_id": id.map(|i| i.to_hex()),
            "replayed_service": cap.adv.service_uuid,
            "displayed_count": count,
            "staleness_secs": scan.started_at.saturating_sub(cap.t),
            "matches_live_schedule": id.is_some() && id == live_id_at_scan,
            "genuine_tag_in_range": genuine_tag_in_range,
        }),
    )
}

// ---------------------------------------------------------------------------
// a8: Anti-Theft hides tags only in the app's display.

/// Identifiers found in Scan and Secure request bodies on the wire.
pub fn scan_ids_on_wire(capture: &WireCapture) -> BTreeSet<PrivateId> {
    capture
        .posts_to("/api/v1/scan_secure")
        .filter_map(|r| r.request.body.as_deref())
        .filter_map(|b| wire::decode::<ScanSecureRequest>(b).ok())
        .flat_map(|req| req.passes().flat_map(|p| p.to_vec()).collect::<Vec<_>>())
        .collect()
}

pub fn a8_verdict(
    wire: &WireCapture,
    stock: Option<&ScanReport>,
    modified: Option<&ScanReport>,
    anti_theft_ids: &BTreeSet<PrivateId>,
) -> AttackVerdict {
    let on_wire: BTreeSet<PrivateId> = scan_ids_on_wire(wire).intersection(anti_theft_ids).copied().collect();
    let shown = |r: Option<&ScanReport>| -> Option<BTreeSet<PrivateId>> {
        r.map(|r| {
            r.displayed
                .iter()
                .map(|(id, _)| *id)
                .filter(|id| anti_theft_ids.contains(id))
                .collect()
        })
    };
    let stock_shown = shown(stock);
    let modified_shown = shown(modified);
    let wire_ok = !on_wire.is_empty();
    let stock_ok = stock_shown.as_ref().is_some_and(|s| s.is_empty());
    let modified_ok = modified_shown.as_ref().is_some_and(|s| !s.is_empty());
    let hex = |s: &BTreeSet<PrivateId>| s.iter().map(|i| i.to_hex()).collect::<Vec<_>>();
    AttackVerdict::new(
        "a8",
        wire_ok && stock_ok && modified_ok,
        json!({
            "wire_contains_anti_theft_ids": wire_ok,
            "stock_display_excludes": stock_ok,
            "modified_display_includes": modified_ok,
            "anti_theft_ids_on_wire": hex(&on_wire),
            "stock_displayed": stock_shown.as_ref().map(hex),
            "modified_displayed": modified_shown.as_ref().map(hex),
        }),
    )
}

/// Whether a FEEC replay would survive the FEED-only scan filter.
pub fn is_scannable(adv: &Advertisement) -> bool {
    adv.service_uuid == ServiceUuid::Feed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::derive_private_id_seed;

    fn cap(t: u64, mac: u8, id: Option<PrivateId>) -> Capture {
        let mac = MacAddr([mac; 6]);
        Capture {
            t,
            receiver: Position::default(),
            adv: match id {
                Some(id) => Advertisement::activated(mac, id, t),
                None => Advertisement::pre_activation(mac, t),
            },
        }
    }

    #[test]
    fn a3_partition_scoring() {
        let log = CaptureLog { entries: vec![cap(0, 1, Some(PrivateId([1; 8]))), cap(900, 1, Some(PrivateId([2; 8]))), cap(0, 2, Some(PrivateId([3; 8])))] };
        let good = CaptureTruth { emitters: vec![EmitterId(0), EmitterId(0), EmitterId(1)] };
        assert!(a3_verdict(&log, &good).success());
        let merged = CaptureTruth { emitters: vec![EmitterId(0), EmitterId(2), EmitterId(1)] };
        let v = a3_verdict(&log, &merged);
        assert!(!v.success());
        assert_eq!(v.evidence["false_merges"], 1);
        let single = CaptureLog { entries: vec![cap(5, 9, None)] };
        assert_eq!(a3_link_by_static_mac(&single).len(), 1);
    }

    #[test]
    fn a4_requires_a_full_cycle() {
        let seed = derive_private_id_seed(&AuthKey([1; 16]), &TileId([2; 8]));
        let day = 86_400;
        let mk = |days: u64| CaptureLog {
            entries: (0..=days)
                .map(|d| {
                    let t = d * day + 3600;
                    let ctr = crypto::schedule_counter(0, t).unwrap();
                    cap(t, d as u8, Some(crypto::private_id(&seed, ctr).unwrap()))
                })
                .collect(),
        };
        let truth = |n: u64| CaptureTruth { emitters: vec![EmitterId(0); n as usize + 1] };
        assert!(a4_fingerprint_by_cycle(&mk(88)).is_none());
        assert_eq!(a4_verdict(&mk(88), &truth(88)).outcome, Outcome::Inconclusive);
        let v = a4_verdict(&mk(90), &truth(90));
        assert!(v.success(), "{}", v.evidence);
        assert_eq!(v.evidence["lag_links"], 1);
    }

    #[test]
    fn a5_wrong_key_matches_nothing() {
        let tile = TileId([2; 8]);
        let key = AuthKey([1; 16]);
        let id = crypto::private_id_at(&key, &tile, 0, 5000).unwrap();
        let log = CaptureLog { entries: vec![cap(5000, 1, Some(id))] };
        assert_eq!(a5_track_with_compromised_key(&[key], &tile, &log), vec![0]);
        assert!(a5_track_with_compromised_key(&[AuthKey([9; 16])], &tile, &log).is_empty());
    }

    #[test]
    fn derived_ids_cover_window() {
        let key = AuthKey([1; 16]);
        let tile = TileId([2; 8]);
        let ids = derived_ids(&key, &tile, 100, 1000, 1000 + 900);
        assert_eq!(ids.len(), 2);
        assert!(ids.contains(&crypto::private_id_at(&key, &tile, 100, 1000).unwrap()));
    }

    #[test]
    fn a2_localizes_lone_user() {
        let center = GeoPoint { latitude: 33.7756, longitude: -84.3963 };
        let proj = GeoAnchor { latitude: center.latitude, longitude: center.longitude };
        let target = proj.to_geo(Position { x: 3.3 * METERS_PER_MILE, y: -6.1 * METERS_PER_MILE });
        let mut oracle = |q: GeoPoint| u64::from(haversine_miles(q, target) <= 5.0);
        let est = a2_community_deanonymize(&mut oracle, SearchArea { center, half_width_miles: 10.0 }, 200);
        let v = a2_verdict(&est, target, 200);
        assert!(v.success(), "{}", v.evidence);
    }

    #[test]
    fn a2_fails_in_dense_population() {
        let center = GeoPoint { latitude: 33.7756, longitude: -84.3963 };
        let proj = GeoAnchor { latitude: center.latitude, longitude: center.longitude };
        let mut rng = crate::sim::child_rng(5, "population");
        let crowd: Vec<GeoPoint> = (0..400)
            .map(|_| {
                use rand::Rng;
                let x = rng.random_range(-12.0..12.0) * METERS_PER_MILE;
                let y = rng.random_range(-12.0..12.0) * METERS_PER_MILE;
                proj.to_geo(Position { x, y })
            })
            .collect();
        let target = crowd[0];
        let mut oracle = |q: GeoPoint| crowd.iter().filter(|p| haversine_miles(q, **p) <= 5.0).count() as u64;
        let est = a2_community_deanonymize(&mut oracle, SearchArea { center, half_width_miles: 10.0 }, 200);
        assert!(!a2_verdict(&est, target, 200).success());
        let mut flat = |_q: GeoPoint| 40;
        let est = a2_community_deanonymize(&mut flat, SearchArea { center, half_width_miles: 10.0 }, 200);
        assert!(!a2_verdict(&est, center, 200).success());
    }

    #[test]
    fn replay_of_feec_is_not_scannable() {
        assert!(!is_scannable(&Advertisement::pre_activation(MacAddr([1; 6]), 0)));
    }
}
