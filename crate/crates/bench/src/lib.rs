//! Shared inputs for the benchmarks.

use sbdc_core::contact_graph::{
    build_contact_plan, build_time_expanded_graph, Contact, ForecastSample, ForecastSet, NodeForecast, NodeProfile,
    TimeExpandedGraph,
};
use sbdc_core::scenario::{Scenario, EXAMPLE_SCENARIO};
use sbdc_core::EnergyZone;

/// The bundled example scenario cut to `horizon_s`.
pub fn example(horizon_s: f64) -> Scenario {
    let mut s = Scenario::from_toml(EXAMPLE_SCENARIO).expect("bundled scenario is valid");
    s.horizon_s = horizon_s;
    s
}

pub fn contact_plan(s: &Scenario) -> Vec<Contact> {
    let nodes: Vec<_> = s.node_setups().iter().map(|n| n.node).collect();
    build_contact_plan(&nodes, &s.links, &s.environment(), s.horizon_s, s.engine.contact_step_s)
}

/// Time-expanded graph over the example geometry with every node green,
/// idle and healthy.
pub fn graph(s: &Scenario, slot_s: f64) -> TimeExpandedGraph {
    let plan = contact_plan(s);
    let slots = (s.horizon_s / slot_s).ceil() as usize;
    let nodes = s
        .node_setups()
        .iter()
        .map(|n| NodeForecast {
            profile: NodeProfile {
                id: n.node.id,
                layer: n.node.layer,
                p_tx_w_per_bps: n.spec.power.p_tx_w_per_bps,
                compute_j_per_unit: n.spec.power.p_compute_max_w / n.spec.compute_capacity.max(1e-9),
            },
            samples: (0..slots)
                .map(|k| ForecastSample {
                    time_s: k as f64 * slot_s,
                    zone: EnergyZone::Green,
                    available_capacity_units: n.spec.compute_capacity,
                    thermal_headroom: 1.0,
                    risk_rate_per_s: 1e-7,
                    alive: true,
                })
                .collect(),
        })
        .collect();
    let forecasts = ForecastSet {
        start_s: 0.0,
        end_s: slots as f64 * slot_s,
        nodes,
    };
    build_time_expanded_graph(&plan, &forecasts, slot_s, s.horizon_s, s.outage_model.outage_rate_per_s)
        .expect("forecasts cover the plan")
}
