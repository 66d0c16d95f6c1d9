//! Node compute capacity, processor-sharing execution, radiation dose,
//! single-event upsets and the failure-risk signal.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, ModelError};
use crate::orbits::Layer;
use crate::power_thermal::{PowerSpec, ThermalSpec};
use crate::traffic::{TaskClass, TaskId};

const SECONDS_PER_YEAR: f64 = 365.25 * 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub node_id: NodeId,
    pub name: String,
    pub layer: Layer,
    /// Compute units per second at full health.
    pub compute_capacity: f64,
    pub storage_bits: f64,
    pub isl_terminals: u32,
    pub power: PowerSpec,
    pub thermal: ThermalSpec,
}

impl NodeSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.compute_capacity.is_finite() && self.compute_capacity > 0.0) {
            return Err(ConfigError::invalid("compute_capacity", "must be > 0"));
        }
        if !(self.storage_bits >= 0.0) {
            return Err(ConfigError::invalid("storage_bits", "must be >= 0"));
        }
        self.power.validate().map_err(|e| e.within("power"))?;
        self.thermal.validate().map_err(|e| e.within("thermal"))
    }
}

/// Capacity multiplier as a function of consumed dose fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeratingCurve {
    /// `1 − (1 − end_of_life)·fraction`.
    Linear { end_of_life_fraction: f64 },
    /// Linear interpolation through `(dose_fraction, derating)` points.
    Piecewise { points: Vec<[f64; 2]> },
}

impl Default for DeratingCurve {
    fn default() -> Self {
        DeratingCurve::Linear {
            end_of_life_fraction: 0.5,
        }
    }
}

impl DeratingCurve {
    pub fn derating(&self, dose_fraction: f64) -> f64 {
        let f = dose_fraction.clamp(0.0, 1.0);
        match self {
            DeratingCurve::Linear { end_of_life_fraction } => 1.0 - (1.0 - end_of_life_fraction) * f,
            DeratingCurve::Piecewise { points } => {
                let Some(first) = points.first() else { return 1.0 };
                if f <= first[0] {
                    return first[1];
                }
                for w in points.windows(2) {
                    let ([x0, y0], [x1, y1]) = (w[0], w[1]);
                    if f <= x1 {
                        return y0 + (y1 - y0) * (f - x0) / (x1 - x0);
                    }
                }
                points.last().map(|p| p[1]).unwrap_or(1.0)
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self {
            DeratingCurve::Linear { end_of_life_fraction } => {
                if !(*end_of_life_fraction > 0.0 && *end_of_life_fraction <= 1.0) {
                    return Err(ConfigError::invalid(
                        "derating.end_of_life_fraction",
                        "must lie in (0, 1]",
                    ));
                }
            }
            DeratingCurve::Piecewise { points } => {
                if points.is_empty() {
                    return Err(ConfigError::invalid("derating.points", "needs at least one point"));
                }
                let mut last_x = f64::NEG_INFINITY;
                let mut last_y = f64::INFINITY;
                for p in points {
                    if !(p[0] > last_x && p[1] <= last_y && p[1] > 0.0 && p[1] <= 1.0) {
                        return Err(ConfigError::invalid(
                            "derating.points",
                            "dose fractions must increase and deratings stay in (0, 1] non-increasing",
                        ));
                    }
                    last_x = p[0];
                    last_y = p[1];
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeHealth {
    pub tid_accumulated_krad: f64,
    pub tid_tolerance_krad: f64,
    pub seu_rate_per_s: f64,
    pub derating: f64,
    pub failed: bool,
    pub curve: DeratingCurve,
}

impl NodeHealth {
    pub fn new(tid_accumulated_krad: f64, tid_tolerance_krad: f64, seu_rate_per_s: f64, curve: DeratingCurve) -> Self {
        let mut h = Self {
            tid_accumulated_krad,
            tid_tolerance_krad,
            seu_rate_per_s,
            derating: 1.0,
            failed: false,
            curve,
        };
        h.refresh();
        h
    }

    pub fn dose_fraction(&self) -> f64 {
        self.tid_accumulated_krad / self.tid_tolerance_krad
    }

    fn refresh(&mut self) {
        if self.tid_accumulated_krad >= self.tid_tolerance_krad {
            self.failed = true;
        }
        self.derating = self.curve.derating(self.dose_fraction());
    }
}

pub fn derated_capacity(spec: &NodeSpec, health: &NodeHealth) -> Result<f64, ModelError> {
    if health.failed {
        return Err(ModelError::NodeDead);
    }
    Ok(spec.compute_capacity * health.derating)
}

pub fn accumulate_dose(health: &NodeHealth, dose_rate_krad_per_year: f64, dt_s: f64) -> NodeHealth {
    let mut next = health.clone();
    next.tid_accumulated_krad += dose_rate_krad_per_year * dt_s / SECONDS_PER_YEAR;
    // failure latches; derating freezes at the failure point
    if !next.failed {
        next.refresh();
    }
    next
}

/// Poisson fault count for an interval of `dt_s` seconds.
pub fn sample_seu_faults<R: Rng + ?Sized>(health: &NodeHealth, dt_s: f64, rng: &mut R) -> u64 {
    let lambda = health.seu_rate_per_s * dt_s;
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("finite positive mean").sample(rng) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskParams {
    pub k_seu: f64,
    /// Hazard per second at full dose fraction.
    pub k_tid: f64,
}

impl Default for RiskParams {
    fn default() -> Self {
        Self {
            k_seu: 1.0,
            k_tid: 1e-6,
        }
    }
}

pub fn hazard_rate(health: &NodeHealth, params: &RiskParams) -> f64 {
    health.seu_rate_per_s * params.k_seu + params.k_tid * health.dose_fraction()
}

/// Probability of a failure event within `duration_s`.
pub fn failure_risk(health: &NodeHealth, duration_s: f64, params: &RiskParams) -> f64 {
    1.0 - (-hazard_rate(health, params) * duration_s).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskExecution {
    pub task_id: TaskId,
    pub class: TaskClass,
    pub demand_units: f64,
    pub progress: f64,
    pub checkpoint_progress: f64,
    pub started_at: f64,
    pub node_id: NodeId,
    /// Executed seconds since the last checkpoint.
    pub since_checkpoint_s: f64,
}

impl TaskExecution {
    pub fn new(task_id: TaskId, class: TaskClass, demand_units: f64, node_id: NodeId, started_at: f64) -> Self {
        Self {
            task_id,
            class,
            demand_units,
            progress: 0.0,
            checkpoint_progress: 0.0,
            started_at,
            node_id,
            since_checkpoint_s: 0.0,
        }
    }

    /// Resumes migrated work at its checkpoint.
    pub fn resume(mut self, node_id: NodeId, at: f64) -> Self {
        self.progress = self.checkpoint_progress;
        self.node_id = node_id;
        self.started_at = at;
        self.since_checkpoint_s = 0.0;
        self
    }

    fn remaining_units(&self) -> f64 {
        ((1.0 - self.progress) * self.demand_units).max(0.0)
    }

    pub fn checkpoint(&mut self) {
        self.checkpoint_progress = self.progress;
        self.since_checkpoint_s = 0.0;
    }

    pub fn rollback(&mut self) {
        self.progress = self.checkpoint_progress;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub spec: NodeSpec,
    pub health: NodeHealth,
    pub running: Vec<TaskExecution>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionStep {
    /// Completed task and its completion offset within the step.
    pub completed: Vec<(TaskExecution, f64)>,
    pub utilization: f64,
    pub load_w: f64,
}

impl Node {
    pub fn new(spec: NodeSpec, health: NodeHealth) -> Self {
        Self {
            spec,
            health,
            running: Vec::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.spec.node_id
    }

    pub fn is_alive(&self) -> bool {
        !self.health.failed
    }

    pub fn capacity(&self) -> f64 {
        derated_capacity(&self.spec, &self.health).unwrap_or(0.0)
    }

    /// Advances running tasks by `dt_s` under equal-share processor
    /// sharing; completions inside the step are resolved exactly.
    pub fn execute_step(&mut self, dt_s: f64, tx_load_w: f64, checkpoint_interval_s: f64) -> ExecutionStep {
        let cap = self.capacity();
        let mut completed = Vec::new();
        let mut elapsed = 0.0;
        let mut busy = 0.0;
        if cap > 0.0 {
            loop {
                // zero-demand work finishes on arrival
                let mut i = 0;
                while i < self.running.len() {
                    if self.running[i].remaining_units() <= 0.0 {
                        let mut done = self.running.remove(i);
                        done.progress = 1.0;
                        completed.push((done, elapsed));
                    } else {
                        i += 1;
                    }
                }
                let n = self.running.len();
                let left = dt_s - elapsed;
                if n == 0 || left <= 0.0 {
                    break;
                }
                let share = cap / n as f64;
                let min_rem = self
                    .running
                    .iter()
                    .map(TaskExecution::remaining_units)
                    .fold(f64::INFINITY, f64::min);
                let to_finish = min_rem / share;
                let span = to_finish.min(left);
                for t in &mut self.running {
                    if t.remaining_units() <= min_rem && to_finish <= left {
                        t.progress = 1.0;
                    } else {
                        t.progress = (t.progress + share * span / t.demand_units).min(1.0);
                    }
                    t.since_checkpoint_s += span;
                    if t.class.flags().checkpointable && t.since_checkpoint_s >= checkpoint_interval_s {
                        t.checkpoint();
                    }
                }
                elapsed += span;
                busy += span;
                if to_finish > left {
                    break;
                }
            }
        } else {
            // dead or zero capacity: nothing advances
        }
        let utilization = if dt_s > 0.0 { (busy / dt_s).clamp(0.0, 1.0) } else { 0.0 };
        ExecutionStep {
            completed,
            utilization,
            load_w: self.spec.power.p_idle_w + self.spec.power.p_compute_max_w * utilization + tx_load_w,
        }
    }

    /// Rolls `count` uniformly chosen running tasks back to their
    /// checkpoints. Returns the affected task ids.
    pub fn apply_seu_faults<R: Rng + ?Sized>(&mut self, count: u64, rng: &mut R) -> Vec<TaskId> {
        let mut hit = Vec::new();
        if self.running.is_empty() {
            return hit;
        }
        for _ in 0..count {
            let i = rng.random_range(0..self.running.len());
            self.running[i].rollback();
            hit.push(self.running[i].task_id);
        }
        hit
    }
}
