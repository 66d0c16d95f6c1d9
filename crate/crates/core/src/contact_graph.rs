//! Contact plans from orbital geometry, stochastic ISL outages, and the
//! time-expanded contact graph annotated with per-slot node forecasts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::GraphError;
use crate::node_model::NodeId;
use crate::orbits::{
    isl_visibility_with_margin, predicate_windows, visibility, CircularOrbit, Environment, GroundStation, Layer,
    SatelliteState, LUNAR_OWLT_S, WINDOW_TOLERANCE_S,
};
use crate::power_thermal::EnergyZone;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ContactKind {
    #[serde(rename = "ISL")]
    Isl,
    Feeder,
    Access,
}

impl ContactKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ContactKind::Isl => "ISL",
            ContactKind::Feeder => "Feeder",
            ContactKind::Access => "Access",
        }
    }
}

impl std::fmt::Display for ContactKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ContactKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ISL" | "isl" | "Isl" => Ok(ContactKind::Isl),
            "Feeder" | "feeder" => Ok(ContactKind::Feeder),
            "Access" | "access" => Ok(ContactKind::Access),
            other => Err(format!("unknown contact kind {other:?}")),
        }
    }
}

/// Directed communication opportunity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub src: NodeId,
    pub dst: NodeId,
    pub start_s: f64,
    pub end_s: f64,
    pub rate_bps: f64,
    pub owlt_s: f64,
    pub kind: ContactKind,
}

impl Contact {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

fn sort_plan(plan: &mut [Contact]) {
    plan.sort_by(|a, b| {
        a.start_s
            .total_cmp(&b.start_s)
            .then(a.src.cmp(&b.src))
            .then(a.dst.cmp(&b.dst))
            .then(a.kind.cmp(&b.kind))
            .then(a.end_s.total_cmp(&b.end_s))
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationRole {
    Gateway,
    UserTerminal,
}

/// Position of an intra-plane ring member.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RingSlot {
    pub shell: u32,
    pub plane: u32,
    pub index: u32,
    pub plane_size: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodePosition {
    Orbit(CircularOrbit),
    Station(GroundStation, StationRole),
    /// Fixed-delay cislunar relay; no geometry.
    Lunar,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstellationNode {
    pub id: NodeId,
    pub layer: Layer,
    pub position: NodePosition,
    pub ring: Option<RingSlot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IslTopology {
    /// Intra-plane ring plus nearest upper-layer node by footprint.
    #[default]
    RingCrossLayer,
    FullMesh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkConfig {
    pub isl_rate_bps: f64,
    pub feeder_rate_bps: f64,
    pub access_rate_bps: f64,
    pub lunar_rate_bps: f64,
    pub topology: IslTopology,
    pub grazing_margin_km: f64,
    pub lunar_owlt_s: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            isl_rate_bps: 10e9,
            feeder_rate_bps: 2e9,
            access_rate_bps: 100e6,
            lunar_rate_bps: 100e6,
            topology: IslTopology::RingCrossLayer,
            grazing_margin_km: crate::orbits::ISL_GRAZING_MARGIN_KM,
            lunar_owlt_s: LUNAR_OWLT_S,
        }
    }
}

fn orbit_of(n: &ConstellationNode) -> Option<&CircularOrbit> {
    match &n.position {
        NodePosition::Orbit(o) => Some(o),
        _ => None,
    }
}

type IndexPairs = Vec<(usize, usize)>;

/// Unordered satellite pairs eligible for ISLs, with the predicate
/// restricting when the pair counts as linked.
fn isl_pairs(nodes: &[ConstellationNode], topology: IslTopology) -> (IndexPairs, IndexPairs) {
    let sats: Vec<usize> = (0..nodes.len()).filter(|&i| orbit_of(&nodes[i]).is_some()).collect();
    let mut always = Vec::new();
    let mut footprint = Vec::new();
    match topology {
        IslTopology::FullMesh => {
            for (k, &i) in sats.iter().enumerate() {
                for &j in &sats[k + 1..] {
                    always.push((i, j));
                }
            }
        }
        IslTopology::RingCrossLayer => {
            for (k, &i) in sats.iter().enumerate() {
                for &j in &sats[k + 1..] {
                    let (a, b) = (&nodes[i], &nodes[j]);
                    if let (Some(ra), Some(rb)) = (a.ring, b.ring) {
                        if ra.shell == rb.shell && ra.plane == rb.plane && ra.plane_size >= 2 {
                            let n = ra.plane_size;
                            let d = (ra.index + n - rb.index) % n;
                            if d == 1 || d == n - 1 {
                                always.push((i, j));
                            }
                        }
                    }
                    if a.layer != b.layer {
                        footprint.push((i, j));
                    }
                }
            }
        }
    }
    (always, footprint)
}

/// Contacts for every eligible pair over `[0, horizon_s]`, both
/// directions, sampled every `step_s` and refined to 0.1 s.
pub fn build_contact_plan(
    nodes: &[ConstellationNode],
    links: &LinkConfig,
    env: &Environment,
    horizon_s: f64,
    step_s: f64,
) -> Vec<Contact> {
    assert!(horizon_s > 0.0 && step_s > 0.0);
    let c = env.constants;
    let step = step_s.min(horizon_s);
    let mut plan = Vec::new();
    let push_pair = |plan: &mut Vec<Contact>, a: NodeId, b: NodeId, w: (f64, f64), rate: f64, owlt: f64, kind| {
        if w.1 <= w.0 {
            return;
        }
        for (src, dst) in [(a, b), (b, a)] {
            plan.push(Contact {
                src,
                dst,
                start_s: w.0,
                end_s: w.1,
                rate_bps: rate,
                owlt_s: owlt,
                kind,
            });
        }
    };

    // space-to-ground
    for sat in nodes {
        let Some(orbit) = orbit_of(sat) else { continue };
        for gs in nodes {
            let NodePosition::Station(station, role) = gs.position else {
                continue;
            };
            let (kind, rate) = match role {
                StationRole::Gateway => (ContactKind::Feeder, links.feeder_rate_bps),
                StationRole::UserTerminal => {
                    if sat.layer != Layer::Leo {
                        continue;
                    }
                    (ContactKind::Access, links.access_rate_bps)
                }
            };
            let windows = predicate_windows(
                |t| visibility(&orbit.propagate(t, &c), &station, t, env).visible,
                horizon_s,
                step,
                WINDOW_TOLERANCE_S,
            );
            for w in windows {
                let mid = 0.5 * (w.0 + w.1);
                let range = visibility(&orbit.propagate(mid, &c), &station, mid, env).slant_range_km;
                push_pair(&mut plan, sat.id, gs.id, w, rate, range / c.speed_of_light_km_s, kind);
            }
        }
    }

    // inter-satellite
    let (always, footprint) = isl_pairs(nodes, links.topology);
    let state = |i: usize, t: f64| -> SatelliteState { orbit_of(&nodes[i]).expect("satellite").propagate(t, &c) };
    let visible = |i: usize, j: usize, t: f64| {
        isl_visibility_with_margin(&state(i, t), &state(j, t), &c, links.grazing_margin_km).visible
    };
    let emit_isl = |plan: &mut Vec<Contact>, i: usize, j: usize, windows: Vec<(f64, f64)>| {
        for w in windows {
            let mid = 0.5 * (w.0 + w.1);
            let range = (state(i, mid).position - state(j, mid).position).norm();
            push_pair(
                plan,
                nodes[i].id,
                nodes[j].id,
                w,
                links.isl_rate_bps,
                range / c.speed_of_light_km_s,
                ContactKind::Isl,
            );
        }
    };
    for &(i, j) in &always {
        let windows = predicate_windows(|t| visible(i, j, t), horizon_s, step, WINDOW_TOLERANCE_S);
        emit_isl(&mut plan, i, j, windows);
    }
    for &(i, j) in &footprint {
        // the lower node links to its nearest visible node of the upper layer
        let (lo, hi) = if nodes[i].layer < nodes[j].layer {
            (i, j)
        } else {
            (j, i)
        };
        let upper_layer = nodes[hi].layer;
        let peers: Vec<usize> = (0..nodes.len())
            .filter(|&k| nodes[k].layer == upper_layer && orbit_of(&nodes[k]).is_some())
            .collect();
        let nearest = |t: f64| -> Option<usize> {
            let nadir = state(lo, t).position.normalize();
            let mut best: Option<(f64, usize)> = None;
            for &k in &peers {
                if !visible(lo, k, t) {
                    continue;
                }
                let angle = nadir.dot(&state(k, t).position.normalize());
                // larger cosine = closer footprint; ties to the lower index
                if best.is_none_or(|(b, _)| angle > b) {
                    best = Some((angle, k));
                }
            }
            best.map(|(_, k)| k)
        };
        let windows = predicate_windows(|t| nearest(t) == Some(hi), horizon_s, step, WINDOW_TOLERANCE_S);
        emit_isl(&mut plan, i, j, windows);
    }

    // lunar relay: always reachable from gateways and GEO nodes
    for lunar in nodes.iter().filter(|n| matches!(n.position, NodePosition::Lunar)) {
        for peer in nodes {
            let linked =
                matches!(peer.position, NodePosition::Station(_, StationRole::Gateway)) || peer.layer == Layer::Geo;
            if linked {
                let kind = if peer.layer == Layer::Ground {
                    ContactKind::Feeder
                } else {
                    ContactKind::Isl
                };
                push_pair(
                    &mut plan,
                    lunar.id,
                    peer.id,
                    (0.0, horizon_s),
                    links.lunar_rate_bps,
                    links.lunar_owlt_s,
                    kind,
                );
            }
        }
    }

    sort_plan(&mut plan);
    plan
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutageModel {
    /// Rate of pointing-loss events while a link is up.
    pub outage_rate_per_s: f64,
    pub reacquisition_mean_s: f64,
}

impl Default for OutageModel {
    fn default() -> Self {
        Self {
            outage_rate_per_s: 1.0 / 600.0,
            reacquisition_mean_s: 5.0,
        }
    }
}

impl OutageModel {
    pub fn none() -> Self {
        Self {
            outage_rate_per_s: 0.0,
            reacquisition_mean_s: 0.0,
        }
    }

    /// Long-run fraction of time a link is up.
    pub fn expected_availability(&self) -> f64 {
        if self.outage_rate_per_s == 0.0 {
            1.0
        } else {
            1.0 / (1.0 + self.outage_rate_per_s * self.reacquisition_mean_s)
        }
    }

    /// Alternating up/down renewal process on `[0, until)`; returns the
    /// down intervals.
    pub fn sample_outages<R: Rng + ?Sized>(&self, until: f64, rng: &mut R) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        if self.outage_rate_per_s <= 0.0 {
            return out;
        }
        let up = Exp::new(self.outage_rate_per_s).expect("positive rate");
        let down = (self.reacquisition_mean_s > 0.0)
            .then(|| Exp::new(1.0 / self.reacquisition_mean_s).expect("positive mean"));
        let mut t = 0.0;
        loop {
            t += up.sample(rng);
            if t >= until {
                break;
            }
            let d = down.as_ref().map(|d| d.sample(rng)).unwrap_or(0.0);
            out.push((t, t + d));
            t += d;
        }
        out
    }
}

/// Removes the down intervals (sorted, disjoint) from a contact.
pub fn trim_contact(contact: &Contact, outages: &[(f64, f64)]) -> Vec<Contact> {
    let mut pieces = Vec::new();
    let mut cursor = contact.start_s;
    for &(a, b) in outages {
        if b <= cursor {
            continue;
        }
        if a >= contact.end_s {
            break;
        }
        if a > cursor {
            pieces.push((cursor, a));
        }
        cursor = cursor.max(b);
        if cursor >= contact.end_s {
            break;
        }
    }
    if cursor < contact.end_s {
        pieces.push((cursor, contact.end_s));
    }
    pieces
        .into_iter()
        .filter(|(a, b)| b > a)
        .map(|(a, b)| Contact {
            start_s: a,
            end_s: b,
            ..*contact
        })
        .collect()
}

/// Applies one outage realization per undirected ISL link; both
/// directions of a link share it. Non-ISL contacts pass unchanged.
pub fn apply_outages<R: Rng + ?Sized>(plan: &[Contact], model: &OutageModel, rng: &mut R) -> Vec<Contact> {
    if model.outage_rate_per_s <= 0.0 {
        return plan.to_vec();
    }
    let mut link_end: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
    for c in plan.iter().filter(|c| c.kind == ContactKind::Isl) {
        let key = (c.src.min(c.dst), c.src.max(c.dst));
        let e = link_end.entry(key).or_insert(0.0);
        *e = e.max(c.end_s);
    }
    let outages: BTreeMap<(NodeId, NodeId), Vec<(f64, f64)>> = link_end
        .into_iter()
        .map(|(k, until)| (k, model.sample_outages(until, rng)))
        .collect();
    let mut out = Vec::with_capacity(plan.len());
    for c in plan {
        if c.kind != ContactKind::Isl {
            out.push(*c);
            continue;
        }
        let key = (c.src.min(c.dst), c.src.max(c.dst));
        out.extend(trim_contact(c, &outages[&key]));
    }
    sort_plan(&mut out);
    out
}

/// Removes Feeder contact time inside `[start_s, end_s)`.
pub fn blackout_feeders(plan: &[Contact], start_s: f64, end_s: f64) -> Vec<Contact> {
    let mut out = Vec::with_capacity(plan.len());
    for c in plan {
        if c.kind == ContactKind::Feeder {
            out.extend(trim_contact(c, &[(start_s, end_s)]));
        } else {
            out.push(*c);
        }
    }
    sort_plan(&mut out);
    out
}

/// `contact <src> <dst> <start> <end> <rate_bps> <owlt_s> <kind>` lines.
pub fn write_contact_plan(plan: &[Contact]) -> String {
    let mut s = String::new();
    for c in plan {
        let _ = writeln!(
            s,
            "contact {} {} {} {} {} {} {}",
            c.src.0,
            c.dst.0,
            c.start_s,
            c.end_s,
            c.rate_bps,
            c.owlt_s,
            c.kind.as_str()
        );
    }
    s
}

pub fn parse_contact_plan(text: &str) -> Result<Vec<Contact>, GraphError> {
    let mut plan = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| GraphError::Parse { line: line_no, message };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 8 || f[0] != "contact" {
            return Err(err(format!(
                "expected 8 fields starting with `contact`, got {:?}",
                line
            )));
        }
        let node = |s: &str| {
            s.parse::<u32>()
                .map(NodeId)
                .map_err(|e| err(format!("node id {s:?}: {e}")))
        };
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("number {s:?}: {e}")));
        let c = Contact {
            src: node(f[1])?,
            dst: node(f[2])?,
            start_s: num(f[3])?,
            end_s: num(f[4])?,
            rate_bps: num(f[5])?,
            owlt_s: num(f[6])?,
            kind: f[7].parse().map_err(err)?,
        };
        if !(c.end_s > c.start_s) {
            return Err(err("end must exceed start".into()));
        }
        if !(c.rate_bps > 0.0) {
            return Err(err("rate must be > 0".into()));
        }
        if !(c.owlt_s >= 0.0) {
            return Err(err("owlt must be >= 0".into()));
        }
        plan.push(c);
    }
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VertexAnnotation {
    pub node_id: NodeId,
    pub slot_index: usize,
    pub predicted_zone: EnergyZone,
    /// Compute units per second available in the slot.
    pub available_capacity_units: f64,
    pub thermal_headroom: f64,
    pub risk_rate_per_s: f64,
    pub alive: bool,
}

/// Forecast value of one node at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastSample {
    pub time_s: f64,
    pub zone: EnergyZone,
    pub available_capacity_units: f64,
    pub thermal_headroom: f64,
    pub risk_rate_per_s: f64,
    pub alive: bool,
}

/// Static per-node data the cost model needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub id: NodeId,
    pub layer: Layer,
    pub p_tx_w_per_bps: f64,
    /// Joules per compute unit at full utilization.
    pub compute_j_per_unit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeForecast {
    pub profile: NodeProfile,
    /// Time-ordered samples.
    pub samples: Vec<ForecastSample>,
}

impl NodeForecast {
    /// Latest sample at or before `t` (the first one if `t` precedes all).
    pub fn at(&self, t: f64) -> Option<&ForecastSample> {
        let idx = self.samples.partition_point(|s| s.time_s <= t);
        self.samples.get(idx.saturating_sub(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSet {
    pub start_s: f64,
    pub end_s: f64,
    pub nodes: Vec<NodeForecast>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommEdge {
    pub id: usize,
    pub src: NodeId,
    pub dst: NodeId,
    pub src_slot: usize,
    pub dst_slot: usize,
    /// Usable transmission window inside the slot.
    pub window_start_s: f64,
    pub window_end_s: f64,
    pub rate_bps: f64,
    pub owlt_s: f64,
    pub kind: ContactKind,
    pub capacity_bits: f64,
    /// Index of the originating contact in the plan.
    pub contact: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageEdge {
    pub node: NodeId,
    pub from_slot: usize,
    pub to_slot: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComputeEdge {
    pub node: NodeId,
    pub slot: usize,
    pub capacity_units: f64,
}

/// Node × slot graph. Vertex `(node_index, slot)` lives at
/// `node_index * slot_count + slot`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeExpandedGraph {
    start_s: f64,
    slot_s: f64,
    slot_count: usize,
    profiles: Vec<NodeProfile>,
    index: BTreeMap<NodeId, usize>,
    annotations: Vec<VertexAnnotation>,
    comm: Vec<CommEdge>,
    /// Outgoing communication edge ids per node index, by window start.
    outgoing: Vec<Vec<usize>>,
    isl_outage_rate_per_s: f64,
}

/// Builds the graph over `[forecasts.start_s, forecasts.start_s + horizon_s)`.
pub fn build_time_expanded_graph(
    plan: &[Contact],
    forecasts: &ForecastSet,
    slot_s: f64,
    horizon_s: f64,
    isl_outage_rate_per_s: f64,
) -> Result<TimeExpandedGraph, GraphError> {
    if !(slot_s > 0.0) {
        return Err(GraphError::BadSlot(slot_s));
    }
    let start = forecasts.start_s;
    let slot_count = (horizon_s / slot_s).ceil().max(1.0) as usize;
    let end = start + slot_count as f64 * slot_s;
    // forecasts must cover the slot midpoints
    let last_mid = start + (slot_count as f64 - 0.5) * slot_s;
    if forecasts.end_s < last_mid {
        return Err(GraphError::HorizonMismatch {
            plan_s: end - start,
            forecast_s: forecasts.end_s - start,
        });
    }
    let mut nodes: Vec<&NodeForecast> = forecasts.nodes.iter().collect();
    nodes.sort_by_key(|n| n.profile.id);
    let index: BTreeMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (n.profile.id, i)).collect();
    for c in plan {
        for id in [c.src, c.dst] {
            if !index.contains_key(&id) {
                return Err(GraphError::UnknownNode(id.0));
            }
        }
    }
    let mut annotations = Vec::with_capacity(nodes.len() * slot_count);
    for n in &nodes {
        for k in 0..slot_count {
            let mid = start + (k as f64 + 0.5) * slot_s;
            let s = n.at(mid).ok_or(GraphError::HorizonMismatch {
                plan_s: end - start,
                forecast_s: forecasts.end_s - start,
            })?;
            if s.time_s > mid {
                return Err(GraphError::HorizonMismatch {
                    plan_s: end - start,
                    forecast_s: forecasts.end_s - start,
                });
            }
            annotations.push(VertexAnnotation {
                node_id: n.profile.id,
                slot_index: k,
                predicted_zone: s.zone,
                available_capacity_units: s.available_capacity_units.max(0.0),
                thermal_headroom: s.thermal_headroom.clamp(0.0, 1.0),
                risk_rate_per_s: s.risk_rate_per_s,
                alive: s.alive,
            });
        }
    }

    let mut comm = Vec::new();
    for (ci, c) in plan.iter().enumerate() {
        let a = c.start_s.max(start);
        let b = c.end_s.min(end);
        if b <= a {
            continue;
        }
        let first = ((a - start) / slot_s).floor() as usize;
        let last = (((b - start) / slot_s).ceil() as usize).min(slot_count);
        for k in first..last {
            let s0 = start + k as f64 * slot_s;
            let ws = a.max(s0);
            let we = b.min(s0 + slot_s);
            if we <= ws {
                continue;
            }
            let dst_slot = (((ws + c.owlt_s - start) / slot_s).floor() as usize).min(slot_count - 1);
            comm.push(CommEdge {
                id: 0,
                src: c.src,
                dst: c.dst,
                src_slot: k,
                dst_slot,
                window_start_s: ws,
                window_end_s: we,
                rate_bps: c.rate_bps,
                owlt_s: c.owlt_s,
                kind: c.kind,
                capacity_bits: c.rate_bps * (we - ws),
                contact: ci,
            });
        }
    }
    comm.sort_by(|x, y| {
        (index[&x.src], x.src_slot, index[&x.dst], x.dst_slot)
            .cmp(&(index[&y.src], y.src_slot, index[&y.dst], y.dst_slot))
            .then(x.window_start_s.total_cmp(&y.window_start_s))
            .then(x.contact.cmp(&y.contact))
    });
    let mut outgoing = vec![Vec::new(); nodes.len()];
    for (i, e) in comm.iter_mut().enumerate() {
        e.id = i;
        outgoing[index[&e.src]].push(i);
    }
    for list in &mut outgoing {
        list.sort_by(|&x, &y| {
            comm[x]
                .window_start_s
                .total_cmp(&comm[y].window_start_s)
                .then(x.cmp(&y))
        });
    }
    Ok(TimeExpandedGraph {
        start_s: start,
        slot_s,
        slot_count,
        profiles: nodes.iter().map(|n| n.profile).collect(),
        index,
        annotations,
        comm,
        outgoing,
        isl_outage_rate_per_s,
    })
}

impl TimeExpandedGraph {
    pub fn start_s(&self) -> f64 {
        self.start_s
    }
    pub fn slot_s(&self) -> f64 {
        self.slot_s
    }
    pub fn slot_count(&self) -> usize {
        self.slot_count
    }
    pub fn end_s(&self) -> f64 {
        self.start_s + self.slot_count as f64 * self.slot_s
    }
    pub fn node_count(&self) -> usize {
        self.profiles.len()
    }
    pub fn vertex_count(&self) -> usize {
        self.profiles.len() * self.slot_count
    }
    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.profiles.iter().map(|p| p.id)
    }
    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }
    pub fn profile(&self, id: NodeId) -> Option<&NodeProfile> {
        self.node_index(id).map(|i| &self.profiles[i])
    }
    pub fn isl_outage_rate_per_s(&self) -> f64 {
        self.isl_outage_rate_per_s
    }
    pub fn comm_edges(&self) -> &[CommEdge] {
        &self.comm
    }
    pub fn edge(&self, id: usize) -> &CommEdge {
        &self.comm[id]
    }
    pub fn outgoing(&self, id: NodeId) -> &[usize] {
        self.node_index(id).map(|i| self.outgoing[i].as_slice()).unwrap_or(&[])
    }
    pub fn vertex_id(&self, node: NodeId, slot: usize) -> Option<usize> {
        self.node_index(node)
            .filter(|_| slot < self.slot_count)
            .map(|i| i * self.slot_count + slot)
    }
    pub fn annotation(&self, node: NodeId, slot: usize) -> Option<&VertexAnnotation> {
        self.vertex_id(node, slot).map(|v| &self.annotations[v])
    }
    pub fn slot_of(&self, t: f64) -> Option<usize> {
        if t < self.start_s {
            return None;
        }
        let k = ((t - self.start_s) / self.slot_s).floor() as usize;
        (k < self.slot_count).then_some(k)
    }
    pub fn slot_start(&self, slot: usize) -> f64 {
        self.start_s + slot as f64 * self.slot_s
    }
    pub fn storage_edges(&self) -> impl Iterator<Item = StorageEdge> + '_ {
        let n = self.slot_count;
        self.profiles.iter().flat_map(move |p| {
            (0..n.saturating_sub(1)).map(move |k| StorageEdge {
                node: p.id,
                from_slot: k,
                to_slot: k + 1,
            })
        })
    }
    pub fn compute_edges(&self) -> impl Iterator<Item = ComputeEdge> + '_ {
        let dt = self.slot_s;
        self.annotations.iter().map(move |a| ComputeEdge {
            node: a.node_id,
            slot: a.slot_index,
            capacity_units: a.available_capacity_units * dt,
        })
    }
    /// Whether `node` may hold and forward traffic at `t`.
    pub fn can_relay(&self, node: NodeId, t: f64) -> bool {
        let Some(p) = self.profile(node) else { return false };
        if p.layer == Layer::Ground {
            return false;
        }
        let slot = self.slot_of(t).unwrap_or(self.slot_count.saturating_sub(1));
        self.annotation(node, slot).is_some_and(|a| a.alive)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbits::{PhysicalConstants, GEO_ALTITUDE_KM};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn flat_forecasts(ids: &[u32], start: f64, end: f64, step: f64) -> ForecastSet {
        let nodes = ids
            .iter()
            .map(|&id| NodeForecast {
                profile: NodeProfile {
                    id: NodeId(id),
                    layer: Layer::Leo,
                    p_tx_w_per_bps: 1e-8,
                    compute_j_per_unit: 1.0,
                },
                samples: (0..=((end - start) / step).ceil() as usize)
                    .map(|k| ForecastSample {
                        time_s: start + k as f64 * step,
                        zone: EnergyZone::Green,
                        available_capacity_units: 10.0,
                        thermal_headroom: 0.5,
                        risk_rate_per_s: 0.0,
                        alive: true,
                    })
                    .collect(),
            })
            .collect();
        ForecastSet {
            start_s: start,
            end_s: end,
            nodes,
        }
    }

    fn contact(src: u32, dst: u32, a: f64, b: f64) -> Contact {
        Contact {
            src: NodeId(src),
            dst: NodeId(dst),
            start_s: a,
            end_s: b,
            rate_bps: 1e6,
            owlt_s: 0.01,
            kind: ContactKind::Isl,
        }
    }

    #[test]
    fn two_node_always_on_enumeration() {
        let plan = [contact(0, 1, 0.0, 90.0)];
        let g = build_time_expanded_graph(&plan, &flat_forecasts(&[0, 1], 0.0, 90.0, 30.0), 30.0, 90.0, 0.0).unwrap();
        assert_eq!(g.vertex_count(), 6);
        assert_eq!(g.comm_edges().len(), 3);
        assert_eq!(g.storage_edges().count(), 4);
        assert_eq!(g.compute_edges().count(), 6);
    }

    #[test]
    fn empty_plan_has_only_storage() {
        let g = build_time_expanded_graph(&[], &flat_forecasts(&[0, 1], 0.0, 90.0, 30.0), 30.0, 90.0, 0.0).unwrap();
        assert!(g.comm_edges().is_empty());
        assert_eq!(g.storage_edges().count(), 4);
    }

    #[test]
    fn short_contact_in_wide_slot() {
        let plan = [contact(0, 1, 12.0, 17.0)];
        let g = build_time_expanded_graph(&plan, &flat_forecasts(&[0, 1], 0.0, 120.0, 60.0), 60.0, 120.0, 0.0).unwrap();
        assert_eq!(g.comm_edges().len(), 1);
        assert!((g.comm_edges()[0].capacity_bits - 5e6).abs() < 1e-6);
    }

    #[test]
    fn capacity_accounting_matches_contact() {
        let plan = [contact(0, 1, 7.5, 161.25)];
        let g = build_time_expanded_graph(&plan, &flat_forecasts(&[0, 1], 0.0, 300.0, 30.0), 30.0, 300.0, 0.0).unwrap();
        let total: f64 = g.comm_edges().iter().map(|e| e.capacity_bits).sum();
        assert!((total - 1e6 * (161.25 - 7.5)).abs() < 1e-3);
        for e in g.comm_edges() {
            assert!(e.dst_slot >= e.src_slot);
        }
    }

    #[test]
    fn forecast_shortfall_is_a_config_error() {
        let plan = [contact(0, 1, 0.0, 90.0)];
        let err = build_time_expanded_graph(&plan, &flat_forecasts(&[0, 1], 0.0, 30.0, 30.0), 30.0, 90.0, 0.0);
        assert!(matches!(err, Err(GraphError::HorizonMismatch { .. })));
        let err = build_time_expanded_graph(&plan, &flat_forecasts(&[0], 0.0, 90.0, 30.0), 30.0, 90.0, 0.0);
        assert!(err.is_err());
    }

    #[test]
    fn annotation_uses_midpoint_sample() {
        let mut f = flat_forecasts(&[0], 0.0, 90.0, 30.0);
        // sample at t=30 turns red: slot 1 midpoint (45 s) sees it, slot 0 does not
        f.nodes[0].samples[1].zone = EnergyZone::Red;
        let g = build_time_expanded_graph(&[], &f, 30.0, 90.0, 0.0).unwrap();
        assert_eq!(g.annotation(NodeId(0), 0).unwrap().predicted_zone, EnergyZone::Green);
        assert_eq!(g.annotation(NodeId(0), 1).unwrap().predicted_zone, EnergyZone::Red);
    }

    #[test]
    fn text_format_round_trips() {
        let plan = vec![
            contact(3, 4, 0.1, 99.123_456_789),
            Contact {
                kind: ContactKind::Feeder,
                ..contact(4, 9, 5.0, 6.0)
            },
        ];
        let text = write_contact_plan(&plan);
        assert!(text.starts_with("contact 3 4 0.1 99.123456789 1000000 0.01 ISL\n"));
        assert_eq!(parse_contact_plan(&text).unwrap(), plan);
        let err = parse_contact_plan("# header\ncontact 1 2 5 4 1 0 ISL\n").unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 2, .. }));
        assert!(parse_contact_plan("contact 1 2 0 4 1 0 Laser").is_err());
    }

    #[test]
    fn outage_trimming() {
        let c = contact(0, 1, 100.0, 200.0);
        assert_eq!(trim_contact(&c, &[]), vec![c]);
        let parts = trim_contact(&c, &[(50.0, 110.0), (150.0, 160.0), (190.0, 400.0)]);
        let spans: Vec<(f64, f64)> = parts.iter().map(|p| (p.start_s, p.end_s)).collect();
        assert_eq!(spans, vec![(110.0, 150.0), (160.0, 190.0)]);
        assert!(trim_contact(&c, &[(90.0, 250.0)]).is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let plan = vec![c];
        assert_eq!(apply_outages(&plan, &OutageModel::none(), &mut rng), plan);
    }

    #[test]
    fn both_directions_share_outages() {
        let plan = vec![contact(0, 1, 0.0, 50_000.0), contact(1, 0, 0.0, 50_000.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = apply_outages(&plan, &OutageModel::default(), &mut rng);
        let fwd: Vec<(f64, f64)> = out
            .iter()
            .filter(|c| c.src == NodeId(0))
            .map(|c| (c.start_s, c.end_s))
            .collect();
        let back: Vec<(f64, f64)> = out
            .iter()
            .filter(|c| c.src == NodeId(1))
            .map(|c| (c.start_s, c.end_s))
            .collect();
        assert_eq!(fwd, back);
        assert!(fwd.len() > 10);
    }

    #[test]
    fn availability_follows_renewal_formula() {
        let model = OutageModel::default();
        assert!((model.expected_availability() - 600.0 / 605.0).abs() < 1e-12);
        let horizon = 1e6;
        let plan = vec![contact(0, 1, 0.0, horizon)];
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let up: f64 = apply_outages(&plan, &model, &mut rng)
            .iter()
            .map(Contact::duration_s)
            .sum();
        assert!((up / horizon - 0.9917).abs() < 0.002, "{}", up / horizon);
    }

    fn sat(id: u32, orbit: CircularOrbit, ring: Option<RingSlot>) -> ConstellationNode {
        ConstellationNode {
            id: NodeId(id),
            layer: orbit.layer(),
            position: NodePosition::Orbit(orbit),
            ring,
        }
    }

    fn station(id: u32, gs: GroundStation, role: StationRole) -> ConstellationNode {
        ConstellationNode {
            id: NodeId(id),
            layer: Layer::Ground,
            position: NodePosition::Station(gs, role),
            ring: None,
        }
    }

    #[test]
    fn geo_over_station_gives_one_feeder_window() {
        let geo = CircularOrbit::equatorial(GEO_ALTITUDE_KM, Layer::Geo).unwrap();
        let nodes = [
            sat(0, geo, None),
            station(1, GroundStation::new(0.0, 0.0, 10.0).unwrap(), StationRole::Gateway),
        ];
        let plan = build_contact_plan(&nodes, &LinkConfig::default(), &Environment::default(), 3600.0, 60.0);
        assert_eq!(plan.len(), 2);
        assert!(plan
            .iter()
            .all(|c| c.kind == ContactKind::Feeder && c.start_s == 0.0 && c.end_s == 3600.0));
        let c = PhysicalConstants::default();
        assert!((plan[0].owlt_s - GEO_ALTITUDE_KM / c.speed_of_light_km_s).abs() < 1e-9);
    }

    #[test]
    fn antipodal_leo_pair_has_no_isl() {
        let a = CircularOrbit::new(550.0, 0.0, 0.0, 0.0, Layer::Leo).unwrap();
        let b = CircularOrbit::new(550.0, 0.0, 0.0, 180.0, Layer::Leo).unwrap();
        let nodes = [sat(0, a, None), sat(1, b, None)];
        let links = LinkConfig {
            topology: IslTopology::FullMesh,
            ..LinkConfig::default()
        };
        let plan = build_contact_plan(&nodes, &links, &Environment::default(), 6000.0, 30.0);
        assert!(plan.is_empty());
    }

    #[test]
    fn overhead_access_pass_duration() {
        let env = Environment::non_rotating();
        let leo = CircularOrbit::new(550.0, 0.0, 0.0, -90.0, Layer::Leo).unwrap();
        let nodes = [
            sat(0, leo, None),
            station(1, GroundStation::new(0.0, 0.0, 0.0).unwrap(), StationRole::UserTerminal),
        ];
        let period = leo.period_s(&env.constants);
        let plan = build_contact_plan(&nodes, &LinkConfig::default(), &env, period, 10.0);
        assert_eq!(plan.len(), 2);
        assert_eq!(plan[0].kind, ContactKind::Access);
        assert!((plan[0].duration_s() - 729.0).abs() < 0.01 * 729.0);
    }

    #[test]
    fn ring_and_cross_layer_topology() {
        // 12-satellite plane at 1200 km: ring neighbours 30° apart are in view
        let mut nodes: Vec<ConstellationNode> = (0..12)
            .map(|k| {
                let o = CircularOrbit::new(1200.0, 53.0, 0.0, k as f64 * 30.0, Layer::Leo).unwrap();
                sat(
                    k,
                    o,
                    Some(RingSlot {
                        shell: 0,
                        plane: 0,
                        index: k,
                        plane_size: 12,
                    }),
                )
            })
            .collect();
        for (k, lon) in [0.0, 120.0, 240.0].into_iter().enumerate() {
            let g = CircularOrbit::new(GEO_ALTITUDE_KM, 0.0, 0.0, lon, Layer::Geo).unwrap();
            nodes.push(sat(12 + k as u32, g, None));
        }
        let plan = build_contact_plan(&nodes, &LinkConfig::default(), &Environment::default(), 7200.0, 30.0);
        let ring: Vec<&Contact> = plan.iter().filter(|c| c.src.0 < 12 && c.dst.0 < 12).collect();
        // 12 ring links × 2 directions, each spanning the horizon
        assert_eq!(ring.len(), 24);
        assert!(ring.iter().all(|c| c.start_s == 0.0 && c.end_s == 7200.0));
        // every LEO always has exactly one GEO uplink at a time
        for leo in 0..12u32 {
            let mut t = 5.0;
            while t < 7200.0 {
                let up = plan
                    .iter()
                    .filter(|c| c.src.0 == leo && c.dst.0 >= 12 && c.start_s <= t && t < c.end_s)
                    .count();
                assert_eq!(up, 1, "leo {leo} at {t}");
                t += 97.0;
            }
        }
    }
}
