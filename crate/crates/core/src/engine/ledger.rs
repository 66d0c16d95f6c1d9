//! Run records and their CSV/JSON serialization.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::node_model::NodeId;
use crate::orchestrator::{quantile, SlaReport};
use crate::traffic::{TaskClass, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    InFlight,
    Completed,
    Missed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: TaskId,
    pub class: TaskClass,
    pub origin: String,
    pub arrival_s: f64,
    pub status: TaskStatus,
    pub execution_node: Option<NodeId>,
    pub start_s: Option<f64>,
    pub completion_s: Option<f64>,
    pub latency_s: Option<f64>,
    pub deadline_met: Option<bool>,
    pub forwards: u32,
    pub migrations: u32,
    pub replicas: u32,
    pub miss_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub time_s: f64,
    pub node: NodeId,
    pub soc_wh: f64,
    pub soc_fraction: f64,
    pub harvest_w: f64,
    pub load_w: f64,
    pub radiator_k: f64,
    pub zone: String,
    pub eclipsed: bool,
    pub dose_fraction: f64,
    pub alive: bool,
    pub running: usize,
    /// Running tasks other than housekeeping.
    pub running_mission: usize,
    pub queued: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Traffic {
    Payload,
    Control,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub depart_s: f64,
    pub arrive_s: f64,
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: String,
    pub bits: f64,
    pub traffic: Traffic,
    pub task: Option<TaskId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrchestrationRecord {
    pub time_s: f64,
    pub tier: String,
    pub action: String,
    pub task: Option<TaskId>,
    pub from: Option<NodeId>,
    pub to: Option<NodeId>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregates {
    pub tasks_generated: u64,
    pub completed: u64,
    pub missed: u64,
    pub in_flight: u64,
    pub completion_rate: f64,
    /// Completed late plus missed, over generated.
    pub deadline_miss_rate: f64,
    pub mean_latency_s: f64,
    pub p95_latency_s: f64,
    pub p95_latency_by_class_s: BTreeMap<String, f64>,
    pub feeder_payload_bits: f64,
    pub feeder_control_bits: f64,
    pub feeder_bits_total: f64,
    pub isl_bits: f64,
    pub energy_j: f64,
    pub energy_per_completed_task_j: f64,
    pub migrations: u64,
    pub replicas_launched: u64,
    pub forwards: u64,
    pub handovers: u64,
    pub red_zone_violations: u64,
    pub red_zone_node_s: f64,
    pub stale_table_flags: u64,
    pub unprotected_tasks: u64,
    pub sla_breaches: u64,
    pub sla_risk_flags: u64,
    pub degraded_views: u64,
    pub access_violations: u64,
    pub tables_delivered: u64,
    pub control_bundles_dropped: u64,
    pub node_failures: u64,
    pub max_energy_error_fraction: f64,
    pub isl_nominal_s: f64,
    pub isl_available_s: f64,
    pub isl_availability: f64,
    pub simulated_s: f64,
    pub physics_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario_name: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub rng_algorithm: String,
    pub mode: String,
    pub contact_plan_digest: String,
    pub config: serde_json::Value,
    pub metrics: Aggregates,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLedger {
    pub tasks: BTreeMap<TaskId, TaskRecord>,
    pub energy: Vec<EnergySample>,
    pub links: Vec<LinkRecord>,
    pub orchestration: Vec<OrchestrationRecord>,
    pub sla_reports: Vec<(f64, SlaReport)>,
    pub summary: Summary,
}

pub const LEDGER_FILES: [&str; 5] = [
    "tasks.csv",
    "energy.csv",
    "links.csv",
    "orchestration.csv",
    "summary.json",
];

fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> String {
    let mut w = csv::WriterBuilder::new()
        .has_headers(rows.is_empty())
        .from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header).expect("in-memory write");
    }
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Latency quantile of completed tasks, nearest rank.
pub fn latency_quantile<'a>(records: impl Iterator<Item = &'a TaskRecord>, q: f64) -> Option<f64> {
    let lat: Vec<f64> = records.filter_map(|r| r.latency_s).collect();
    quantile(&lat, q)
}

impl MetricsLedger {
    pub fn tasks_csv(&self) -> String {
        let rows: Vec<&TaskRecord> = self.tasks.values().collect();
        to_csv(
            &rows,
            &[
                "task_id",
                "class",
                "origin",
                "arrival_s",
                "status",
                "execution_node",
                "start_s",
                "completion_s",
                "latency_s",
                "deadline_met",
                "forwards",
                "migrations",
                "replicas",
                "miss_reason",
            ],
        )
    }

    pub fn energy_csv(&self) -> String {
        to_csv(
            &self.energy,
            &[
                "time_s",
                "node",
                "soc_wh",
                "soc_fraction",
                "harvest_w",
                "load_w",
                "radiator_k",
                "zone",
                "eclipsed",
                "dose_fraction",
                "alive",
                "running",
                "running_mission",
                "queued",
            ],
        )
    }

    pub fn links_csv(&self) -> String {
        to_csv(
            &self.links,
            &["depart_s", "arrive_s", "src", "dst", "kind", "bits", "traffic", "task"],
        )
    }

    pub fn orchestration_csv(&self) -> String {
        to_csv(
            &self.orchestration,
            &["time_s", "tier", "action", "task", "from", "to", "detail"],
        )
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        s.push('\n');
        s
    }

    /// Every ledger file as `(name, contents)`.
    pub fn files(&self) -> Vec<(&'static str, String)> {
        vec![
            (LEDGER_FILES[0], self.tasks_csv()),
            (LEDGER_FILES[1], self.energy_csv()),
            (LEDGER_FILES[2], self.links_csv()),
            (LEDGER_FILES[3], self.orchestration_csv()),
            (LEDGER_FILES[4], self.summary_json()),
        ]
    }

    pub fn write_dir(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, body) in self.files() {
            std::fs::write(dir.join(name), body)?;
        }
        Ok(())
    }

    pub fn count(&self, status: TaskStatus) -> u64 {
        self.tasks.values().filter(|r| r.status == status).count() as u64
    }
}

/// Key of one run inside a sweep.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RunKey {
    pub point: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    /// `key=value` assignments of the grid point.
    pub params: Vec<(String, String)>,
    pub result: Result<Summary, String>,
}

/// Sweep results keyed by run; merging is a keyed union, so it is
/// commutative and associative.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepResults {
    pub runs: BTreeMap<RunKey, SweepRun>,
}

impl SweepResults {
    pub fn merge(mut self, other: SweepResults) -> SweepResults {
        for (k, v) in other.runs {
            self.runs.entry(k).or_insert(v);
        }
        self
    }

    /// One row per (point, seed).
    pub fn aggregate_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "point",
            "params",
            "seed",
            "status",
            "scenario_hash",
            "tasks_generated",
            "completed",
            "missed",
            "completion_rate",
            "deadline_miss_rate",
            "mean_latency_s",
            "p95_latency_s",
            "feeder_bits_total",
            "energy_per_completed_task_j",
            "migrations",
            "red_zone_violations",
            "error",
        ])
        .expect("in-memory write");
        for (k, run) in &self.runs {
            let params = run
                .params
                .iter()
                .map(|(a, b)| format!("{a}={b}"))
                .collect::<Vec<_>>()
                .join(";");
            let mut row = vec![k.point.to_string(), params, k.seed.to_string()];
            match &run.result {
                Ok(s) => {
                    let m = &s.metrics;
                    row.push("ok".into());
                    row.push(s.scenario_hash.clone());
                    row.extend(
                        [
                            m.tasks_generated as f64,
                            m.completed as f64,
                            m.missed as f64,
                            m.completion_rate,
                            m.deadline_miss_rate,
                            m.mean_latency_s,
                            m.p95_latency_s,
                            m.feeder_bits_total,
                            m.energy_per_completed_task_j,
                            m.migrations as f64,
                            m.red_zone_violations as f64,
                        ]
                        .iter()
                        .map(|v| v.to_string()),
                    );
                    row.push(String::new());
                }
                Err(e) => {
                    row.push("error".into());
                    row.extend(std::iter::repeat_n(String::new(), 12));
                    row.push(e.clone());
                }
            }
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(point: usize, seed: u64) -> (RunKey, SweepRun) {
        (
            RunKey { point, seed },
            SweepRun {
                params: vec![("k".into(), point.to_string())],
                result: Err(format!("{point}/{seed}")),
            },
        )
    }

    fn results(keys: &[(usize, u64)]) -> SweepResults {
        SweepResults {
            runs: keys.iter().map(|&(p, s)| run(p, s)).collect(),
        }
    }

    #[test]
    fn merge_is_commutative_and_associative() {
        let a = results(&[(0, 1), (1, 1)]);
        let b = results(&[(0, 2)]);
        let c = results(&[(1, 2), (2, 1)]);
        assert_eq!(a.clone().merge(b.clone()), b.clone().merge(a.clone()));
        assert_eq!(a.clone().merge(b.clone()).merge(c.clone()), a.merge(b.merge(c)));
    }

    #[test]
    fn aggregate_has_one_row_per_run() {
        let r = results(&[(0, 1), (0, 2), (1, 1)]);
        assert_eq!(r.aggregate_csv().lines().count(), 4);
    }
}
