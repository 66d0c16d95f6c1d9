#![allow(dead_code)]

pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sbdc_core::contact_graph::{
    build_time_expanded_graph, Contact, ContactKind, ForecastSample, ForecastSet, NodeForecast, NodeProfile,
    TimeExpandedGraph,
};
use sbdc_core::node_model::NodeId;
use sbdc_core::orbits::Layer;
use sbdc_core::power_thermal::EnergyZone;
use sbdc_core::routing::Reservations;
use sbdc_core::traffic::{Origin, Task, TaskClass, TaskId};

pub const SLOT_S: f64 = 30.0;

/// A small random routing/placement problem.
pub struct Instance {
    pub plan: Vec<Contact>,
    pub forecasts: ForecastSet,
    pub graph: TimeExpandedGraph,
    pub reservations: Reservations,
    pub task: Task,
    pub source: NodeId,
    pub release_s: f64,
    pub candidates: Vec<NodeId>,
    pub return_to: Vec<NodeId>,
}

pub fn random_plan(rng: &mut ChaCha8Rng, n: u32, horizon: f64) -> Vec<Contact> {
    let mut plan = Vec::new();
    let count = rng.random_range(n..=3 * n + 3);
    for _ in 0..count {
        let src = rng.random_range(0..n);
        let mut dst = rng.random_range(0..n - 1);
        if dst >= src {
            dst += 1;
        }
        let start = rng.random_range(0.0..horizon * 0.9);
        let len = rng.random_range(5.0..100.0);
        plan.push(Contact {
            src: NodeId(src),
            dst: NodeId(dst),
            start_s: start,
            end_s: (start + len).min(horizon),
            rate_bps: [2e5, 5e5, 1e6][rng.random_range(0..3)],
            owlt_s: rng.random_range(0.0..3.0),
            kind: if rng.random_bool(0.7) {
                ContactKind::Isl
            } else {
                ContactKind::Feeder
            },
        });
    }
    plan
}

pub fn random_forecasts(rng: &mut ChaCha8Rng, n: u32, slots: usize) -> ForecastSet {
    let nodes = (0..n)
        .map(|id| {
            let layer = match rng.random_range(0..10) {
                0 => Layer::Ground,
                1 => Layer::Lunar,
                2 => Layer::Geo,
                3 => Layer::Meo,
                _ => Layer::Leo,
            };
            let samples = (0..slots)
                .map(|k| ForecastSample {
                    time_s: k as f64 * SLOT_S,
                    zone: match rng.random_range(0..20) {
                        0..=2 => EnergyZone::Red,
                        3..=7 => EnergyZone::Yellow,
                        _ => EnergyZone::Green,
                    },
                    available_capacity_units: rng.random_range(0.0..20.0),
                    thermal_headroom: rng.random_range(0.0..1.0),
                    risk_rate_per_s: if rng.random_bool(0.5) {
                        0.0
                    } else {
                        rng.random_range(0.0..2e-3)
                    },
                    alive: rng.random_bool(0.97),
                })
                .collect();
            NodeForecast {
                profile: NodeProfile {
                    id: NodeId(id),
                    layer,
                    p_tx_w_per_bps: rng.random_range(1e-9..1e-7),
                    compute_j_per_unit: rng.random_range(0.5..20.0),
                },
                samples,
            }
        })
        .collect();
    ForecastSet {
        start_s: 0.0,
        end_s: slots as f64 * SLOT_S,
        nodes,
    }
}

pub fn random_task(rng: &mut ChaCha8Rng, source: NodeId, release: f64) -> Task {
    let class = TaskClass::ALL[rng.random_range(0..TaskClass::ALL.len())];
    Task {
        id: TaskId(rng.random_range(0..1000)),
        class,
        arrival_time_s: release,
        origin: Origin::Node(source),
        input_bits: rng.random_range(1e4..4e6),
        compute_demand_units: if rng.random_bool(0.1) {
            0.0
        } else {
            rng.random_range(1.0..800.0)
        },
        output_bits: if rng.random_bool(0.3) {
            0.0
        } else {
            rng.random_range(1e3..2e6)
        },
        deadline_s: if rng.random_bool(0.7) {
            Some(rng.random_range(5.0..600.0))
        } else {
            None
        },
        replication_k: rng.random_range(1..=3),
        parent: None,
    }
}

/// Instance with at most 6 nodes and 40 slots.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=6u32);
    let slots = rng.random_range(3..=40usize);
    let horizon = slots as f64 * SLOT_S;
    let plan = random_plan(&mut rng, n, horizon);
    let forecasts = random_forecasts(&mut rng, n, slots);
    let outage = if rng.random_bool(0.5) { 1.0 / 600.0 } else { 0.0 };
    let graph = build_time_expanded_graph(&plan, &forecasts, SLOT_S, horizon, outage).expect("graph");
    let mut reservations = Reservations::default();
    let mut bits = Vec::new();
    for e in graph.comm_edges() {
        if rng.random_bool(0.2) {
            bits.push(e.id);
        }
    }
    let mut probe = reservations.clone();
    // partial reservations exercise the capacity offsets
    for id in bits {
        let cap = graph.edge(id).capacity_bits;
        probe = seed_edge(probe, id, rng.random_range(0.0..cap));
    }
    reservations = probe;
    let source = NodeId(rng.random_range(0..n));
    let release = rng.random_range(0.0..horizon * 0.5);
    let task = random_task(&mut rng, source, release);
    let mut candidates: Vec<NodeId> = (0..n).map(NodeId).filter(|_| rng.random_bool(0.6)).collect();
    if candidates.is_empty() {
        candidates.push(NodeId(rng.random_range(0..n)));
    }
    let return_to = match rng.random_range(0..3) {
        0 => Vec::new(),
        1 => vec![source],
        _ => (0..n).map(NodeId).filter(|_| rng.random_bool(0.4)).collect(),
    };
    Instance {
        plan,
        forecasts,
        graph,
        reservations,
        task,
        source,
        release_s: release,
        candidates,
        return_to,
    }
}

fn seed_edge(mut res: Reservations, edge: usize, bits: f64) -> Reservations {
    use sbdc_core::routing::{Hop, Route};
    res.reserve_route(
        &Route {
            hops: vec![Hop {
                edge,
                depart_s: 0.0,
                arrive_s: 0.0,
            }],
            delivery_s: 0.0,
        },
        bits,
    );
    res
}
