//! Exhaustive enumeration over node-simple edge sequences.

use std::collections::BTreeMap;

use sbdc_core::contact_graph::TimeExpandedGraph;
use sbdc_core::node_model::NodeId;
use sbdc_core::power_thermal::ZonePolicy;
use sbdc_core::routing::{
    evaluate_placement, execute_on, walk_path, CostWeights, PlacementDecision, PlacementQuery, Reservations,
};

/// Every feasible node-simple edge sequence leaving `origin` at `t0`
/// (including the empty one), with its final node and arrival time.
pub fn feasible_paths(
    g: &TimeExpandedGraph,
    res: &Reservations,
    extra: &BTreeMap<usize, f64>,
    origin: NodeId,
    t0: f64,
    bits: f64,
) -> Vec<(Vec<usize>, NodeId, f64)> {
    let mut out = Vec::new();
    let mut stack = vec![(Vec::<usize>::new(), origin, t0)];
    while let Some((path, at, t)) = stack.pop() {
        for e in g.comm_edges() {
            if e.src != at {
                continue;
            }
            let mut next = path.clone();
            next.push(e.id);
            if let Some((hops, _, _)) = walk_path(g, res, extra, origin, t0, bits, &next, 0.0, 1.0) {
                let arrive = hops.last().unwrap().arrive_s;
                stack.push((next, e.dst, arrive));
            }
        }
        out.push((path, at, t));
    }
    out
}

/// Minimum (delivery, hop count, edge ids) over all paths to `dst`.
pub fn brute_route(
    g: &TimeExpandedGraph,
    res: &Reservations,
    src: NodeId,
    dst: NodeId,
    t0: f64,
    bits: f64,
) -> Option<(Vec<usize>, f64)> {
    feasible_paths(g, res, &BTreeMap::new(), src, t0, bits)
        .into_iter()
        .filter(|(_, at, _)| *at == dst)
        .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.len().cmp(&b.0.len())).then(a.0.cmp(&b.0)))
        .map(|(p, _, t)| (p, t))
}

/// A task already at its execution node may start on release; anything
/// that had to travel waits for a slot boundary.
fn slot_boundaries_after(g: &TimeExpandedGraph, t: f64, moved: bool) -> Vec<f64> {
    let mut v = Vec::new();
    if !moved && t >= g.start_s() && t < g.end_s() {
        v.push(t);
    }
    v.extend((0..g.slot_count()).map(|k| g.slot_start(k)).filter(|&s| s > t));
    v
}

/// Best decision over every candidate, forward path, execution start and
/// return path.
pub fn brute_place(
    g: &TimeExpandedGraph,
    res: &Reservations,
    weights: &CostWeights,
    policy: &ZonePolicy,
    q: &PlacementQuery<'_>,
) -> Option<PlacementDecision> {
    let task = q.task;
    let mut best: Option<PlacementDecision> = None;
    let forward = feasible_paths(g, res, &BTreeMap::new(), q.source, q.release_s, task.input_bits);
    for (fwd, node, ready) in &forward {
        if !q.candidates.contains(node) {
            continue;
        }
        for start in slot_boundaries_after(g, *ready, !fwd.is_empty()) {
            let Some(exec) = execute_on(g, res, policy, task, *node, start) else {
                continue;
            };
            let mut extra = BTreeMap::new();
            for &e in fwd {
                *extra.entry(e).or_insert(0.0) += task.input_bits;
            }
            let returns = feasible_paths(g, res, &extra, *node, exec.end_s, task.output_bits);
            for (ret, _, _) in returns {
                let Some(d) = evaluate_placement(g, res, weights, policy, q, *node, fwd, start, &ret) else {
                    continue;
                };
                if best.as_ref().is_none_or(|b| d.better_than(b)) {
                    best = Some(d);
                }
            }
        }
    }
    best
}
