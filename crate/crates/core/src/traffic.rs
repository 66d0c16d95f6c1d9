//! Workload generation: DHTS handset cohorts (two-state MMPP), serving
//! satellite assignment and handovers, and Earth-observation imaging.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::node_model::NodeId;
use crate::orbits::{elevation_from, Environment, Layer, SatelliteState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId(pub u64);

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Sequential id source shared by all generators of one run.
#[derive(Debug, Default, Clone)]
pub struct TaskIdAllocator {
    next: u64,
}

impl TaskIdAllocator {
    pub fn next_id(&mut self) -> TaskId {
        let id = TaskId(self.next);
        self.next += 1;
        id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskClass {
    RealTimeInference,
    InterruptibleCompression,
    BulkTraining,
    StorageRetrieval,
    Housekeeping,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassFlags {
    pub delay_sensitive: bool,
    pub interruptible: bool,
    pub checkpointable: bool,
    pub delay_tolerant_ok: bool,
}

impl TaskClass {
    pub const ALL: [TaskClass; 5] = [
        TaskClass::RealTimeInference,
        TaskClass::InterruptibleCompression,
        TaskClass::BulkTraining,
        TaskClass::StorageRetrieval,
        TaskClass::Housekeeping,
    ];

    pub fn flags(self) -> ClassFlags {
        let (delay_sensitive, interruptible, checkpointable, delay_tolerant_ok) = match self {
            TaskClass::RealTimeInference => (true, false, false, false),
            TaskClass::InterruptibleCompression => (false, true, true, true),
            TaskClass::BulkTraining => (false, true, true, true),
            TaskClass::StorageRetrieval => (false, true, false, true),
            TaskClass::Housekeeping => (false, false, false, false),
        };
        ClassFlags {
            delay_sensitive,
            interruptible,
            checkpointable,
            delay_tolerant_ok,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskClass::RealTimeInference => "real_time_inference",
            TaskClass::InterruptibleCompression => "interruptible_compression",
            TaskClass::BulkTraining => "bulk_training",
            TaskClass::StorageRetrieval => "storage_retrieval",
            TaskClass::Housekeeping => "housekeeping",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for TaskClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Origin {
    Node(NodeId),
    Cohort(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub class: TaskClass,
    pub arrival_time_s: f64,
    pub origin: Origin,
    pub input_bits: f64,
    pub compute_demand_units: f64,
    pub output_bits: f64,
    /// Relative to arrival.
    pub deadline_s: Option<f64>,
    pub replication_k: u32,
    /// Task whose completion releases this one.
    pub parent: Option<TaskId>,
}

impl Task {
    pub fn absolute_deadline(&self) -> Option<f64> {
        self.deadline_s.map(|d| self.arrival_time_s + d)
    }

    pub fn is_pure_transfer(&self) -> bool {
        self.compute_demand_units == 0.0
    }
}

/// Per-task parameters stamped onto every arrival of a cohort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskTemplate {
    pub class: TaskClass,
    pub input_bits: f64,
    pub compute_demand_units: f64,
    pub output_bits: f64,
    #[serde(default)]
    pub deadline_s: Option<f64>,
    #[serde(default = "one")]
    pub replication_k: u32,
}

fn one() -> u32 {
    1
}

impl TaskTemplate {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.input_bits >= 0.0 && self.output_bits >= 0.0) {
            return Err(ConfigError::invalid("input_bits", "sizes must be >= 0"));
        }
        if !(self.compute_demand_units >= 0.0 && self.compute_demand_units.is_finite()) {
            return Err(ConfigError::invalid("compute_demand_units", "must be >= 0"));
        }
        if self.class == TaskClass::InterruptibleCompression && self.output_bits > self.input_bits {
            return Err(ConfigError::invalid(
                "output_bits",
                "compression tasks cannot grow their data",
            ));
        }
        if let Some(d) = self.deadline_s {
            if !(d > 0.0) {
                return Err(ConfigError::invalid("deadline_s", "must be > 0"));
            }
        }
        if self.replication_k == 0 {
            return Err(ConfigError::invalid("replication_k", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mmpp {
    pub rate_low_per_s: f64,
    pub rate_high_per_s: f64,
    pub switch_low_to_high_per_s: f64,
    pub switch_high_to_low_per_s: f64,
}

impl Mmpp {
    pub fn poisson(rate: f64) -> Self {
        Self {
            rate_low_per_s: rate,
            rate_high_per_s: rate,
            switch_low_to_high_per_s: 1.0,
            switch_high_to_low_per_s: 1.0,
        }
    }

    /// Stationary probability of the high state.
    pub fn pi_high(&self) -> f64 {
        self.switch_low_to_high_per_s / (self.switch_low_to_high_per_s + self.switch_high_to_low_per_s)
    }

    /// Long-run arrival rate per handset.
    pub fn stationary_rate(&self) -> f64 {
        let ph = self.pi_high();
        (1.0 - ph) * self.rate_low_per_s + ph * self.rate_high_per_s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.rate_low_per_s >= 0.0 && self.rate_high_per_s >= self.rate_low_per_s) {
            return Err(ConfigError::invalid(
                "mmpp.rate_high_per_s",
                "requires rate_high >= rate_low >= 0",
            ));
        }
        if !(self.switch_low_to_high_per_s > 0.0 && self.switch_high_to_low_per_s > 0.0) {
            return Err(ConfigError::invalid(
                "mmpp.switch_low_to_high_per_s",
                "switch rates must be > 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandsetCohort {
    pub cohort_id: u32,
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    pub population: u64,
    pub mmpp: Mmpp,
    pub min_elevation_deg: f64,
    pub template: TaskTemplate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandoverEvent {
    pub cohort_id: u32,
    pub from_sat: NodeId,
    pub to_sat: NodeId,
    pub time_s: f64,
}

/// Arrivals of `cohort` in `[t0, t1)`, sorted by time.
pub fn generate_arrivals<R: Rng + ?Sized>(
    cohort: &HandsetCohort,
    t0: f64,
    t1: f64,
    ids: &mut TaskIdAllocator,
    rng: &mut R,
) -> Vec<Task> {
    assert!(t1 > t0, "window must be non-empty");
    let m = &cohort.mmpp;
    let pop = cohort.population as f64;
    let mut high = rng.random::<f64>() < m.pi_high();
    let mut t = t0;
    let mut out = Vec::new();
    loop {
        let (rate, switch) = if high {
            (pop * m.rate_high_per_s, m.switch_high_to_low_per_s)
        } else {
            (pop * m.rate_low_per_s, m.switch_low_to_high_per_s)
        };
        let total = rate + switch;
        let dt = Exp::new(total).expect("positive total rate").sample(rng);
        t += dt;
        if t >= t1 {
            break;
        }
        if rng.random::<f64>() * total < rate {
            let tpl = &cohort.template;
            out.push(Task {
                id: ids.next_id(),
                class: tpl.class,
                arrival_time_s: t,
                origin: Origin::Cohort(cohort.cohort_id),
                input_bits: tpl.input_bits,
                compute_demand_units: tpl.compute_demand_units,
                output_bits: tpl.output_bits,
                deadline_s: tpl.deadline_s,
                replication_k: tpl.replication_k,
                parent: None,
            });
        } else {
            high = !high;
        }
    }
    out
}

/// Candidate serving satellite as seen by the assignment rule.
#[derive(Debug, Clone, Copy)]
pub struct SatelliteView {
    pub id: NodeId,
    pub layer: Layer,
    pub state: SatelliteState,
    pub alive: bool,
}

/// Highest-elevation visible LEO satellite; ties go to the lowest id.
pub fn assign_serving_satellite(
    cohort: &HandsetCohort,
    constellation: &[SatelliteView],
    t: f64,
    env: &Environment,
) -> Option<NodeId> {
    let site = env.surface_position(cohort.latitude_deg, cohort.longitude_deg, t);
    let mut best: Option<(f64, NodeId)> = None;
    for sat in constellation.iter().filter(|s| s.layer == Layer::Leo && s.alive) {
        let v = elevation_from(sat.state.position, site, cohort.min_elevation_deg);
        if !v.visible {
            continue;
        }
        let better = match best {
            None => true,
            Some((el, id)) => v.elevation_deg > el || (v.elevation_deg == el && sat.id < id),
        };
        if better {
            best = Some((v.elevation_deg, sat.id));
        }
    }
    best.map(|(_, id)| id)
}

/// A handover is a change between two serving satellites; attach and
/// coverage loss are not handovers.
pub fn detect_handover(
    cohort_id: u32,
    previous: Option<NodeId>,
    current: Option<NodeId>,
    t: f64,
) -> Option<HandoverEvent> {
    match (previous, current) {
        (Some(a), Some(b)) if a != b => Some(HandoverEvent {
            cohort_id,
            from_sat: a,
            to_sat: b,
            time_s: t,
        }),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagingEvent {
    pub time_s: f64,
    pub input_bits: f64,
    pub compute_demand_units: f64,
}

/// One compression task per imaging event plus the downlink transfer of
/// its output, released when the compression completes.
pub fn generate_eo_workload(
    sat_id: NodeId,
    schedule: &[ImagingEvent],
    compression_ratio: f64,
    ids: &mut TaskIdAllocator,
) -> Result<Vec<Task>, ConfigError> {
    if !(compression_ratio >= 1.0 && compression_ratio.is_finite()) {
        return Err(ConfigError::invalid("compression_ratio", "must be >= 1"));
    }
    let mut out = Vec::with_capacity(schedule.len() * 2);
    for ev in schedule {
        let output = ev.input_bits / compression_ratio;
        let compress = Task {
            id: ids.next_id(),
            class: TaskClass::InterruptibleCompression,
            arrival_time_s: ev.time_s,
            origin: Origin::Node(sat_id),
            input_bits: ev.input_bits,
            compute_demand_units: ev.compute_demand_units,
            output_bits: output,
            deadline_s: None,
            replication_k: 1,
            parent: None,
        };
        let transfer = Task {
            id: ids.next_id(),
            class: TaskClass::StorageRetrieval,
            arrival_time_s: ev.time_s,
            origin: Origin::Node(sat_id),
            input_bits: output,
            compute_demand_units: 0.0,
            output_bits: output,
            deadline_s: None,
            replication_k: 1,
            parent: Some(compress.id),
        };
        out.push(compress);
        out.push(transfer);
    }
    Ok(out)
}
