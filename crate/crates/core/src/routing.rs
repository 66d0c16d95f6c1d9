//! Earliest-delivery routing and joint compute placement over the
//! time-expanded graph.
//!
//! Bundles are atomic: a transfer uses one communication edge window end
//! to end. Edge capacity is a bit budget; bits already reserved on an edge
//! push the earliest departure on it to `window_start + reserved / rate`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::contact_graph::{ContactKind, TimeExpandedGraph};
use crate::error::{ConfigError, RoutingError};
use crate::node_model::NodeId;
use crate::orbits::Layer;
use crate::power_thermal::{lightweight_limit_units, zone_permits, ZonePolicy};
use crate::traffic::{Task, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    /// Cost per second of end-to-end latency.
    pub w_latency: f64,
    /// Cost per Wh.
    pub w_energy: f64,
    /// Cost per unit failure probability.
    pub w_risk: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w_latency: 1.0,
            w_energy: 0.1,
            w_risk: 100.0,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, w) in [
            ("w_latency", self.w_latency),
            ("w_energy", self.w_energy),
            ("w_risk", self.w_risk),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(ConfigError::invalid(name, "must be finite and >= 0"));
            }
        }
        if self.w_latency == 0.0 && self.w_energy == 0.0 && self.w_risk == 0.0 {
            return Err(ConfigError::invalid("w_latency", "at least one weight must be > 0"));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            w_latency: self.w_latency * factor,
            w_energy: self.w_energy * factor,
            w_risk: self.w_risk * factor,
        }
    }
}

/// Linear scalarization of latency, energy and risk.
pub fn placement_cost(weights: &CostWeights, latency_s: f64, energy_j: f64, survival: f64) -> f64 {
    weights.w_latency * latency_s + weights.w_energy * (energy_j / 3600.0) + weights.w_risk * (1.0 - survival)
}

/// Capacity already committed on the graph.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Reservations {
    edge_bits: BTreeMap<usize, f64>,
    vertex_units: BTreeMap<(NodeId, usize), f64>,
}

impl Reservations {
    pub fn edge_bits(&self, edge: usize) -> f64 {
        self.edge_bits.get(&edge).copied().unwrap_or(0.0)
    }

    pub fn vertex_units(&self, node: NodeId, slot: usize) -> f64 {
        self.vertex_units.get(&(node, slot)).copied().unwrap_or(0.0)
    }

    pub fn reserve_route(&mut self, route: &Route, bits: f64) {
        for h in &route.hops {
            *self.edge_bits.entry(h.edge).or_default() += bits;
        }
    }

    pub fn commit(&mut self, d: &PlacementDecision) {
        for h in &d.forward {
            *self.edge_bits.entry(h.edge).or_default() += d.input_bits;
        }
        for h in &d.return_path {
            *self.edge_bits.entry(h.edge).or_default() += d.output_bits;
        }
        for s in &d.execution {
            *self.vertex_units.entry((d.execution_node, s.slot)).or_default() += s.units;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hop {
    pub edge: usize,
    pub depart_s: f64,
    pub arrive_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub hops: Vec<Hop>,
    pub delivery_s: f64,
}

impl Route {
    pub fn edge_ids(&self) -> Vec<usize> {
        self.hops.iter().map(|h| h.edge).collect()
    }
}

/// Execution inside one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecSlot {
    pub slot: usize,
    pub units: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementDecision {
    pub task_id: TaskId,
    pub execution_node: NodeId,
    pub forward: Vec<Hop>,
    pub start_s: f64,
    pub start_slot: usize,
    pub execution: Vec<ExecSlot>,
    pub execution_end_s: f64,
    pub return_path: Vec<Hop>,
    pub estimated_completion_s: f64,
    pub energy_j: f64,
    /// Combined path and execution failure probability.
    pub risk: f64,
    pub total_cost: f64,
    pub replication_k: u32,
    pub input_bits: f64,
    pub output_bits: f64,
}

impl PlacementDecision {
    pub fn hop_count(&self) -> usize {
        self.forward.len() + self.return_path.len()
    }

    fn key(&self) -> DecisionKey {
        DecisionKey {
            cost: self.total_cost,
            completion: self.estimated_completion_s,
            hops: self.hop_count(),
            node: self.execution_node,
            forward: self.forward.iter().map(|h| h.edge).collect(),
            start: self.start_s,
            ret: self.return_path.iter().map(|h| h.edge).collect(),
        }
    }

    /// Whether `self` precedes `other` under the placement tie-break
    /// (cost, completion, hops, node, forward edges, start, return edges).
    pub fn better_than(&self, other: &PlacementDecision) -> bool {
        self.key().cmp(&other.key()) == Ordering::Less
    }
}

#[derive(Debug, Clone, PartialEq)]
struct DecisionKey {
    cost: f64,
    completion: f64,
    hops: usize,
    node: NodeId,
    forward: Vec<usize>,
    start: f64,
    ret: Vec<usize>,
}

impl Eq for DecisionKey {}

impl PartialOrd for DecisionKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DecisionKey {
    fn cmp(&self, o: &Self) -> Ordering {
        self.cost
            .total_cmp(&o.cost)
            .then(self.completion.total_cmp(&o.completion))
            .then(self.hops.cmp(&o.hops))
            .then(self.node.cmp(&o.node))
            .then(self.forward.cmp(&o.forward))
            .then(self.start.total_cmp(&o.start))
            .then(self.ret.cmp(&o.ret))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PlacementQuery<'a> {
    pub task: &'a Task,
    /// Node holding the input at `release_s`.
    pub source: NodeId,
    pub release_s: f64,
    pub candidates: &'a [NodeId],
    /// Nodes that accept the output; empty or zero output bits means no
    /// return transfer.
    pub return_to: &'a [NodeId],
}

/// Whether `edge` may carry traffic that entered the path at `origin`.
/// The transmitter must be alive in the edge's slot and, unless it is the
/// origin, able to relay.
pub fn edge_usable(g: &TimeExpandedGraph, edge: usize, origin: NodeId) -> bool {
    let e = g.edge(edge);
    let Some(a) = g.annotation(e.src, e.src_slot) else {
        return false;
    };
    if !a.alive {
        return false;
    }
    e.src == origin || g.profile(e.src).is_some_and(|p| p.layer != Layer::Ground)
}

/// Departure and arrival for `bits` offered to `edge` at `t`, given bits
/// already committed on it.
pub fn traverse(g: &TimeExpandedGraph, edge: usize, reserved_bits: f64, t: f64, bits: f64) -> Option<(f64, f64)> {
    let e = g.edge(edge);
    let depart = t.max(e.window_start_s + reserved_bits / e.rate_bps);
    let tx = bits / e.rate_bps;
    if depart + tx > e.window_end_s {
        return None;
    }
    Some((depart, depart + tx + e.owlt_s))
}

/// Transmit energy (J) and survival factor of one hop.
pub fn hop_energy_survival(g: &TimeExpandedGraph, edge: usize, bits: f64) -> (f64, f64) {
    let e = g.edge(edge);
    let p_tx = g.profile(e.src).map(|p| p.p_tx_w_per_bps).unwrap_or(0.0);
    let rho = g
        .annotation(e.src, e.src_slot)
        .map(|a| a.risk_rate_per_s)
        .unwrap_or(0.0);
    let outage = if e.kind == ContactKind::Isl {
        g.isl_outage_rate_per_s()
    } else {
        0.0
    };
    let tx = bits / e.rate_bps;
    (p_tx * bits, (-(rho + outage) * tx).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub slots: Vec<ExecSlot>,
    pub end_s: f64,
    /// `exp(−∫ hazard)` over the execution.
    pub survival: f64,
}

/// Runs `demand` compute units on `node` from `start_s` through
/// contiguous slots. Every touched slot must admit the task.
pub fn execute_on(
    g: &TimeExpandedGraph,
    res: &Reservations,
    policy: &ZonePolicy,
    task: &Task,
    node: NodeId,
    start_s: f64,
) -> Option<Execution> {
    let layer = g.profile(node)?.layer;
    let flags = task.class.flags();
    if layer == Layer::Lunar && !flags.delay_tolerant_ok {
        return None;
    }
    let mut slot = g.slot_of(start_s)?;
    let admits = |slot: usize| -> Option<f64> {
        let a = g.annotation(node, slot)?;
        let limit = lightweight_limit_units(policy, a.available_capacity_units);
        let ok = a.alive
            && a.thermal_headroom >= policy.thermal_gate
            && zone_permits(a.predicted_zone, task.class, task.compute_demand_units, limit);
        ok.then_some(a.available_capacity_units * g.slot_s() - res.vertex_units(node, slot))
    };
    let first_residual = admits(slot)?;
    let demand = task.compute_demand_units;
    if demand <= 0.0 {
        return Some(Execution {
            slots: Vec::new(),
            end_s: start_s,
            survival: 1.0,
        });
    }
    let mut residual = first_residual;
    let mut remaining = demand;
    let mut t = start_s;
    let mut slots = Vec::new();
    let mut exposure = 0.0;
    loop {
        if !(residual > 0.0) {
            return None;
        }
        let rate = residual / g.slot_s();
        let slot_end = g.slot_start(slot + 1);
        let rho = g.annotation(node, slot)?.risk_rate_per_s;
        let needed = remaining / rate;
        if t + needed <= slot_end {
            slots.push(ExecSlot {
                slot,
                units: remaining,
                seconds: needed,
            });
            exposure += rho * needed;
            return Some(Execution {
                slots,
                end_s: t + needed,
                survival: (-exposure).exp(),
            });
        }
        let dt = slot_end - t;
        let units = rate * dt;
        slots.push(ExecSlot {
            slot,
            units,
            seconds: dt,
        });
        exposure += rho * dt;
        remaining -= units;
        t = slot_end;
        slot += 1;
        if slot >= g.slot_count() {
            return None;
        }
        residual = admits(slot)?;
    }
}

/// Execution start options for an input present at `ready_s`: every later
/// slot boundary, plus `ready_s` itself when the input never moved.
pub fn start_options(g: &TimeExpandedGraph, ready_s: f64, at_source: bool) -> Vec<f64> {
    let mut out = Vec::new();
    if at_source && ready_s >= g.start_s() && ready_s < g.end_s() {
        out.push(ready_s);
    }
    for k in 0..g.slot_count() {
        let s = g.slot_start(k);
        if s > ready_s {
            out.push(s);
        }
    }
    out
}

/// Bits a forward path leaves on each of its edges, for return traversal.
fn forward_load(forward: &[usize], bits: f64) -> BTreeMap<usize, f64> {
    let mut m = BTreeMap::new();
    for &e in forward {
        *m.entry(e).or_insert(0.0) += bits;
    }
    m
}

/// Walks an explicit edge sequence from `origin` at `t0`. Returns hops,
/// accumulated energy and survival, or `None` if infeasible.
#[allow(clippy::too_many_arguments)]
pub fn walk_path(
    g: &TimeExpandedGraph,
    res: &Reservations,
    extra: &BTreeMap<usize, f64>,
    origin: NodeId,
    t0: f64,
    bits: f64,
    edges: &[usize],
    energy_j: f64,
    survival: f64,
) -> Option<(Vec<Hop>, f64, f64)> {
    let mut at = origin;
    let mut t = t0;
    let mut e_acc = energy_j;
    let mut s_acc = survival;
    let mut hops = Vec::with_capacity(edges.len());
    let mut seen = BTreeSet::from([origin]);
    for &id in edges {
        let e = g.edge(id);
        if e.src != at || !seen.insert(e.dst) || !edge_usable(g, id, origin) {
            return None;
        }
        let reserved = res.edge_bits(id) + extra.get(&id).copied().unwrap_or(0.0);
        let (d, a) = traverse(g, id, reserved, t, bits)?;
        let (ej, sv) = hop_energy_survival(g, id, bits);
        e_acc += ej;
        s_acc *= sv;
        hops.push(Hop {
            edge: id,
            depart_s: d,
            arrive_s: a,
        });
        at = e.dst;
        t = a;
    }
    Some((hops, e_acc, s_acc))
}

/// Evaluates one fully specified candidate: execution node, forward edge
/// sequence, execution start and return edge sequence.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_placement(
    g: &TimeExpandedGraph,
    res: &Reservations,
    weights: &CostWeights,
    policy: &ZonePolicy,
    q: &PlacementQuery<'_>,
    node: NodeId,
    forward: &[usize],
    start_s: f64,
    ret: &[usize],
) -> Option<PlacementDecision> {
    let task = q.task;
    let (fwd, e1, s1) = if forward.is_empty() {
        (Vec::new(), 0.0, 1.0)
    } else {
        walk_path(
            g,
            res,
            &BTreeMap::new(),
            q.source,
            q.release_s,
            task.input_bits,
            forward,
            0.0,
            1.0,
        )?
    };
    let ready = fwd.last().map(|h| h.arrive_s).unwrap_or(q.release_s);
    let end_node = fwd.last().map(|h| g.edge(h.edge).dst).unwrap_or(q.source);
    if end_node != node || start_s < ready {
        return None;
    }
    let exec = execute_on(g, res, policy, task, node, start_s)?;
    let e2 = e1 + task.compute_demand_units * g.profile(node)?.compute_j_per_unit;
    let s2 = s1 * exec.survival;
    let needs_return = needs_return(q, node);
    let (back, e3, s3) = if !needs_return {
        if !ret.is_empty() {
            return None;
        }
        (Vec::new(), e2, s2)
    } else {
        if ret.is_empty() {
            return None;
        }
        let extra = forward_load(forward, task.input_bits);
        let r = walk_path(g, res, &extra, node, exec.end_s, task.output_bits, ret, e2, s2)?;
        if !q.return_to.contains(&g.edge(*ret.last()?).dst) {
            return None;
        }
        r
    };
    let completion = back.last().map(|h| h.arrive_s).unwrap_or(exec.end_s);
    let latency = completion - q.release_s;
    if task.class.flags().delay_sensitive {
        if let Some(d) = task.deadline_s {
            if latency > d {
                return None;
            }
        }
    }
    let cost = placement_cost(weights, latency, e3, s3);
    if !cost.is_finite() {
        return None;
    }
    Some(PlacementDecision {
        task_id: task.id,
        execution_node: node,
        forward: fwd,
        start_s,
        start_slot: g.slot_of(start_s)?,
        execution: exec.slots,
        execution_end_s: exec.end_s,
        return_path: back,
        estimated_completion_s: completion,
        energy_j: e3,
        risk: 1.0 - s3,
        total_cost: cost,
        replication_k: task.replication_k,
        input_bits: task.input_bits,
        output_bits: task.output_bits,
    })
}

fn needs_return(q: &PlacementQuery<'_>, node: NodeId) -> bool {
    q.task.output_bits > 0.0 && !q.return_to.is_empty() && !q.return_to.contains(&node)
}

#[derive(Debug, Clone)]
struct Label {
    node: NodeId,
    t: f64,
    energy_j: f64,
    survival: f64,
    hops: Vec<Hop>,
    edges: Vec<usize>,
    visited: BTreeSet<NodeId>,
}

impl Label {
    fn order(&self, o: &Label) -> Ordering {
        self.t
            .total_cmp(&o.t)
            .then(self.edges.len().cmp(&o.edges.len()))
            .then(self.edges.cmp(&o.edges))
    }
}

struct Queued(Label);

impl PartialEq for Queued {
    fn eq(&self, o: &Self) -> bool {
        self.0.order(&o.0) == Ordering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Queued {
    fn cmp(&self, o: &Self) -> Ordering {
        // min-heap
        o.0.order(&self.0)
    }
}

#[derive(Clone, Copy)]
enum Criteria {
    /// Time then (hops, edges) only.
    Time,
    /// Time, energy, survival, then (hops, edges).
    Pareto,
}

struct Search<'a> {
    g: &'a TimeExpandedGraph,
    res: &'a Reservations,
    extra: &'a BTreeMap<usize, f64>,
    origin: NodeId,
    bits: f64,
    /// Latest admissible arrival.
    t_limit: f64,
    criteria: Criteria,
    /// Whether energy and survival carry cost weight.
    priced: (bool, bool),
}

impl Search<'_> {
    fn dominates(&self, a: &Label, b: &Label) -> bool {
        // callers guarantee a.t <= b.t
        let lex = (a.edges.len(), &a.edges) <= (b.edges.len(), &b.edges);
        match self.criteria {
            Criteria::Time => lex,
            Criteria::Pareto => self.no_worse(a, b, lex),
        }
    }

    /// `a` is no worse on every priced criterion, and either strictly
    /// cheaper on one of them or first in the tie-break order.
    fn no_worse(&self, a: &Label, b: &Label, lex: bool) -> bool {
        let (pe, pr) = self.priced;
        let le = (!pe || a.energy_j <= b.energy_j) && (!pr || a.survival >= b.survival);
        let strict = (pe && a.energy_j < b.energy_j) || (pr && a.survival > b.survival);
        le && (strict || lex)
    }

    /// Label-setting search. `stop_at` ends the search at the first popped
    /// label on a target node; otherwise every non-dominated label is
    /// returned.
    fn run(&self, t0: f64, energy_j: f64, survival: f64, stop_at: Option<&BTreeSet<NodeId>>) -> Vec<Label> {
        let mut heap = BinaryHeap::new();
        heap.push(Queued(Label {
            node: self.origin,
            t: t0,
            energy_j,
            survival,
            hops: Vec::new(),
            edges: Vec::new(),
            visited: BTreeSet::from([self.origin]),
        }));
        let mut accepted: BTreeMap<NodeId, Vec<Label>> = BTreeMap::new();
        let mut out = Vec::new();
        while let Some(Queued(l)) = heap.pop() {
            let bucket = accepted.entry(l.node).or_default();
            if bucket.iter().any(|a| self.dominates(a, &l)) {
                continue;
            }
            if let Some(targets) = stop_at {
                if targets.contains(&l.node) {
                    return vec![l];
                }
            }
            bucket.push(l.clone());
            for &id in self.g.outgoing(l.node) {
                let e = self.g.edge(id);
                if l.visited.contains(&e.dst) || e.window_end_s <= l.t || !edge_usable(self.g, id, self.origin) {
                    continue;
                }
                let reserved = self.res.edge_bits(id) + self.extra.get(&id).copied().unwrap_or(0.0);
                let Some((d, a)) = traverse(self.g, id, reserved, l.t, self.bits) else {
                    continue;
                };
                if a > self.t_limit {
                    continue;
                }
                let (ej, sv) = hop_energy_survival(self.g, id, self.bits);
                let mut next = l.clone();
                next.node = e.dst;
                next.t = a;
                next.energy_j += ej;
                next.survival *= sv;
                next.hops.push(Hop {
                    edge: id,
                    depart_s: d,
                    arrive_s: a,
                });
                next.edges.push(id);
                next.visited.insert(e.dst);
                if accepted
                    .get(&next.node)
                    .is_some_and(|b| b.iter().any(|x| self.dominates(x, &next)))
                {
                    continue;
                }
                heap.push(Queued(next));
            }
            out.push(l);
        }
        if stop_at.is_some() {
            Vec::new()
        } else {
            out
        }
    }
}

/// Earliest delivery of `bits` from `src` to `dst`, ties broken by hop
/// count then edge-id sequence.
pub fn earliest_delivery_route(
    g: &TimeExpandedGraph,
    res: &Reservations,
    src: NodeId,
    dst: NodeId,
    t0: f64,
    bits: f64,
) -> Result<Route, RoutingError> {
    earliest_delivery_to_any(g, res, src, &[dst], t0, bits)
}

/// As [`earliest_delivery_route`] with any node of `dsts` accepted.
pub fn earliest_delivery_to_any(
    g: &TimeExpandedGraph,
    res: &Reservations,
    src: NodeId,
    dsts: &[NodeId],
    t0: f64,
    bits: f64,
) -> Result<Route, RoutingError> {
    for id in std::iter::once(&src).chain(dsts) {
        if g.node_index(*id).is_none() {
            return Err(RoutingError::UnknownNode(id.0));
        }
    }
    let targets: BTreeSet<NodeId> = dsts.iter().copied().collect();
    let extra = BTreeMap::new();
    let search = Search {
        g,
        res,
        extra: &extra,
        origin: src,
        bits,
        t_limit: f64::INFINITY,
        criteria: Criteria::Time,
        priced: (true, true),
    };
    let found = search.run(t0, 0.0, 1.0, Some(&targets));
    let best = found.into_iter().next().ok_or(RoutingError::NoRoute)?;
    Ok(Route {
        delivery_s: best.t,
        hops: best.hops,
    })
}

/// Minimum-cost placement over candidates and forward/return path pairs.
pub fn place_task(
    g: &TimeExpandedGraph,
    res: &Reservations,
    weights: &CostWeights,
    policy: &ZonePolicy,
    q: &PlacementQuery<'_>,
) -> Result<PlacementDecision, RoutingError> {
    if g.node_index(q.source).is_none() {
        return Err(RoutingError::UnknownNode(q.source.0));
    }
    let task = q.task;
    let t_limit = match (task.class.flags().delay_sensitive, task.deadline_s) {
        (true, Some(d)) => q.release_s + d,
        _ => f64::INFINITY,
    };
    let no_extra = BTreeMap::new();
    let priced = (weights.w_energy > 0.0, weights.w_risk > 0.0);
    let forward = Search {
        g,
        res,
        extra: &no_extra,
        origin: q.source,
        bits: task.input_bits,
        t_limit,
        criteria: Criteria::Pareto,
        priced,
    };
    let labels = forward.run(q.release_s, 0.0, 1.0, None);
    let candidates: BTreeSet<NodeId> = q.candidates.iter().copied().collect();
    let mut best: Option<PlacementDecision> = None;
    let mut offer = |d: PlacementDecision| {
        if best.as_ref().is_none_or(|b| d.better_than(b)) {
            best = Some(d);
        }
    };
    for l in labels.iter().filter(|l| candidates.contains(&l.node)) {
        let node = l.node;
        let Some(profile) = g.profile(node) else { continue };
        for start in start_options(g, l.t, l.edges.is_empty()) {
            if start > t_limit {
                break;
            }
            let Some(exec) = execute_on(g, res, policy, task, node, start) else {
                continue;
            };
            if exec.end_s > t_limit {
                continue;
            }
            if !needs_return(q, node) {
                if let Some(d) = evaluate_placement(g, res, weights, policy, q, node, &l.edges, start, &[]) {
                    offer(d);
                }
                continue;
            }
            let e2 = l.energy_j + task.compute_demand_units * profile.compute_j_per_unit;
            let s2 = l.survival * exec.survival;
            let extra = forward_load(&l.edges, task.input_bits);
            let back = Search {
                g,
                res,
                extra: &extra,
                origin: node,
                bits: task.output_bits,
                t_limit,
                criteria: Criteria::Pareto,
                priced,
            };
            for r in back.run(exec.end_s, e2, s2, None) {
                if !q.return_to.contains(&r.node) {
                    continue;
                }
                if let Some(d) = evaluate_placement(g, res, weights, policy, q, node, &l.edges, start, &r.edges) {
                    offer(d);
                }
            }
        }
    }
    best.ok_or(RoutingError::NoFeasiblePlacement)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub placements: Vec<PlacementDecision>,
    /// Fewer disjoint placements than requested were found.
    pub degraded: bool,
}

impl Replication {
    /// Probability that at least one replica completes, treating replica
    /// failures as independent.
    pub fn success_probability(&self) -> f64 {
        1.0 - self.placements.iter().map(|p| p.risk).product::<f64>()
    }
}

/// Adds up to `replication_k − 1` placements on distinct nodes when the
/// primary risk exceeds `risk_threshold`. Each replica is placed against
/// the capacity left by the previous ones.
pub fn replicate_decision(
    g: &TimeExpandedGraph,
    res: &Reservations,
    weights: &CostWeights,
    policy: &ZonePolicy,
    q: &PlacementQuery<'_>,
    primary: PlacementDecision,
    risk_threshold: f64,
) -> Replication {
    let k = q.task.replication_k.max(1) as usize;
    if primary.risk <= risk_threshold || k == 1 {
        return Replication {
            placements: vec![primary],
            degraded: false,
        };
    }
    let mut local = res.clone();
    local.commit(&primary);
    let mut used = BTreeSet::from([primary.execution_node]);
    let mut placements = vec![primary];
    while placements.len() < k {
        let remaining: Vec<NodeId> = q.candidates.iter().copied().filter(|c| !used.contains(c)).collect();
        if remaining.is_empty() {
            break;
        }
        let sub = PlacementQuery {
            candidates: &remaining,
            ..*q
        };
        match place_task(g, &local, weights, policy, &sub) {
            Ok(d) => {
                local.commit(&d);
                used.insert(d.execution_node);
                placements.push(d);
            }
            Err(_) => break,
        }
    }
    Replication {
        degraded: placements.len() < k,
        placements,
    }
}

/// One line per forward hop, execution slot and return hop.
pub fn decision_trace(g: &TimeExpandedGraph, d: &PlacementDecision) -> String {
    let mut s = String::new();
    let hop_line = |s: &mut String, tag: &str, h: &Hop| {
        let e = g.edge(h.edge);
        let _ = writeln!(
            s,
            "{tag} edge={} {}->{} slot={} depart={:.6} arrive={:.6} kind={}",
            h.edge, e.src, e.dst, e.src_slot, h.depart_s, h.arrive_s, e.kind
        );
    };
    for h in &d.forward {
        hop_line(&mut s, "fwd", h);
    }
    for x in &d.execution {
        let _ = writeln!(
            s,
            "exec node={} slot={} units={:.6} seconds={:.6}",
            d.execution_node, x.slot, x.units, x.seconds
        );
    }
    for h in &d.return_path {
        hop_line(&mut s, "ret", h);
    }
    let _ = writeln!(
        s,
        "total task={} completion={:.6} energy_j={:.6} risk={:.9} cost={:.9}",
        d.task_id.0, d.estimated_completion_s, d.energy_j, d.risk, d.total_cost
    );
    s
}
