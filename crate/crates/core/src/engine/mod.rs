//! Discrete-event engine: the event queue, run ledgers, the simulator and
//! the sweep/compare drivers built on it.

pub mod events;
pub mod ledger;
mod sim;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use events::{stream_rng, EventQueue, Priority, RngStreams, RNG_ALGORITHM};
pub use ledger::{
    Aggregates, EnergySample, LinkRecord, MetricsLedger, OrchestrationRecord, RunKey, Summary, SweepResults, SweepRun,
    TaskRecord, TaskStatus, Traffic, LEDGER_FILES,
};
pub use sim::RunOptions;

use crate::contact_graph::{write_contact_plan, Contact};
use crate::error::SimError;
use crate::scenario::{parse_value, scenario_hash, with_overrides, LocatedError, Mode, Scenario};

/// SHA-256 of the serialized contact plan.
pub fn plan_digest(plan: &[Contact]) -> String {
    hex::encode(Sha256::digest(write_contact_plan(plan).as_bytes()))
}

/// Runs one scenario to its horizon.
pub fn run(scenario: &Scenario, opts: &RunOptions) -> Result<MetricsLedger, SimError> {
    log::debug!(
        "run {} seed {} mode {}",
        scenario.name,
        opts.seed.unwrap_or(scenario.seed),
        scenario.mode.as_str()
    );
    let mut ledger = sim::Sim::new(scenario, opts)?
        .run()
        .inspect_err(|e| log::error!("{}: {e}", scenario.name))?;
    ledger.summary.scenario_hash = match &opts.scenario_hash {
        Some(h) => h.clone(),
        None => scenario_hash(&ledger.summary.config.to_string()),
    };
    let m = &ledger.summary.metrics;
    log::debug!(
        "{}: {} generated, {} completed after {} physics steps",
        scenario.name,
        m.tasks_generated,
        m.completed,
        m.physics_steps
    );
    if m.tasks_generated != m.completed + m.missed + m.in_flight {
        return Err(SimError::InvariantViolation {
            invariant: "ledger_completeness",
            detail: format!(
                "{} generated, {} completed, {} missed, {} in flight",
                m.tasks_generated, m.completed, m.missed, m.in_flight
            ),
        });
    }
    Ok(ledger)
}

/// One (grid point, seed) of a sweep.
#[derive(Debug, Clone)]
pub struct SweepJob {
    pub key: RunKey,
    /// Hash of the sweep file text and this point's assignments.
    pub scenario_hash: String,
    pub params: Vec<(String, String)>,
    pub scenario: Scenario,
}

/// Expands `key = [values]` axes into the Cartesian product of grid points,
/// each paired with every seed. Unknown keys and invalid values are
/// rejected before anything runs.
pub fn plan_sweep(
    text: &str,
    grid: &[(String, Vec<String>)],
    seeds: &[u64],
) -> Result<Vec<SweepJob>, Vec<LocatedError>> {
    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (k, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((k.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    let mut jobs = Vec::new();
    for (i, params) in points.into_iter().enumerate() {
        let overrides: Vec<_> = params.iter().map(|(k, v)| (k.clone(), parse_value(v))).collect();
        let scenario = with_overrides(text, &overrides)?;
        let mut keyed = text.to_string();
        for (k, v) in &params {
            keyed.push_str(&format!("\n{k}={v}"));
        }
        let hash = scenario_hash(&keyed);
        for &seed in seeds {
            jobs.push(SweepJob {
                key: RunKey { point: i, seed },
                scenario_hash: hash.clone(),
                params: params.clone(),
                scenario: scenario.clone(),
            });
        }
    }
    Ok(jobs)
}

/// Runs the jobs in parallel. The merged result does not depend on the
/// job order.
pub fn execute_sweep(jobs: &[SweepJob], on_run: impl Fn(&RunKey, &MetricsLedger) + Sync) -> SweepResults {
    jobs.par_iter()
        .map(|job| {
            let opts = RunOptions {
                seed: Some(job.key.seed),
                scenario_hash: Some(job.scenario_hash.clone()),
                ..RunOptions::default()
            };
            let result = run(&job.scenario, &opts).map(|l| {
                on_run(&job.key, &l);
                l.summary
            });
            SweepResults {
                runs: BTreeMap::from([(
                    job.key.clone(),
                    SweepRun {
                        params: job.params.clone(),
                        result: result.map_err(|e| e.to_string()),
                    },
                )]),
            }
        })
        .reduce(SweepResults::default, SweepResults::merge)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeMetrics {
    pub tasks_generated: u64,
    pub completed: u64,
    pub feeder_payload_bits: f64,
    pub feeder_control_bits: f64,
    pub feeder_bits_total: f64,
    pub mean_latency_s: f64,
    pub p95_latency_s: f64,
    pub deadline_miss_rate: f64,
    pub energy_per_completed_task_j: f64,
    pub migrations: u64,
}

impl From<&Aggregates> for ModeMetrics {
    fn from(m: &Aggregates) -> Self {
        Self {
            tasks_generated: m.tasks_generated,
            completed: m.completed,
            feeder_payload_bits: m.feeder_payload_bits,
            feeder_control_bits: m.feeder_control_bits,
            feeder_bits_total: m.feeder_bits_total,
            mean_latency_s: m.mean_latency_s,
            p95_latency_s: m.p95_latency_s,
            deadline_miss_rate: m.deadline_miss_rate,
            energy_per_completed_task_j: m.energy_per_completed_task_j,
            migrations: m.migrations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub scenario_name: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub contact_plan_digest: String,
    pub modes: BTreeMap<String, ModeMetrics>,
    /// Relay feeder bits over in-orbit feeder bits (payload plus control),
    /// when both ran.
    pub feeder_reduction_factor: Option<f64>,
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// `metric,<mode>,<mode>...` rows.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["metric".to_string()];
        header.extend(self.modes.keys().cloned());
        w.write_record(&header).expect("in-memory write");
        let cols: Vec<serde_json::Map<String, serde_json::Value>> = self
            .modes
            .values()
            .map(|m| match serde_json::to_value(m).expect("serializes") {
                serde_json::Value::Object(o) => o,
                _ => unreachable!("struct serializes to an object"),
            })
            .collect();
        if let Some(first) = cols.first() {
            for key in first.keys() {
                let mut row = vec![key.clone()];
                row.extend(cols.iter().map(|c| c[key].to_string()));
                w.write_record(&row).expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Runs the scenario once per mode with identical geometry and seed.
pub fn compare(scenario: &Scenario, modes: &[Mode], opts: &RunOptions) -> Result<ComparisonReport, SimError> {
    let mut digest: Option<String> = None;
    let mut hash = String::new();
    let mut out = BTreeMap::new();
    for &mode in modes {
        let mut s = scenario.clone();
        s.mode = mode;
        let l = run(&s, opts)?;
        let d = l.summary.contact_plan_digest.clone();
        hash = l.summary.scenario_hash.clone();
        match &digest {
            Some(prev) if *prev != d => {
                return Err(SimError::InvariantViolation {
                    invariant: "comparison_geometry",
                    detail: format!("contact plan digest {d} differs from {prev}"),
                })
            }
            _ => digest = Some(d),
        }
        out.insert(mode.as_str().to_string(), ModeMetrics::from(&l.summary.metrics));
    }
    let factor = match (
        out.get(Mode::RelayOnly.as_str()),
        out.get(Mode::InOrbitCompute.as_str()),
    ) {
        (Some(r), Some(o)) if o.feeder_bits_total > 0.0 => Some(r.feeder_bits_total / o.feeder_bits_total),
        _ => None,
    };
    Ok(ComparisonReport {
        scenario_name: scenario.name.clone(),
        scenario_hash: hash,
        seed: opts.seed.unwrap_or(scenario.seed),
        contact_plan_digest: digest.unwrap_or_default(),
        modes: out,
        feeder_reduction_factor: factor,
    })
}
