use thiserror::Error;

use crate::traffic::TaskId;

/// A rejected configuration value, named by its dotted field path.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Prefixes the field path with its enclosing section.
    pub fn within(mut self, section: impl AsRef<str>) -> Self {
        self.field = format!("{}.{}", section.as_ref(), self.field);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("radiator temperature {temperature_k} K is below the sink temperature {sink_k} K")]
    BelowSinkTemperature { temperature_k: f64, sink_k: f64 },
    #[error("time step {dt_s} s exceeds the explicit thermal stability limit {limit_s} s")]
    UnstableThermalStep { dt_s: f64, limit_s: f64 },
    #[error("node is dead")]
    NodeDead,
    #[error("non-positive time step {0}")]
    NonPositiveStep(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoutingError {
    #[error("no route to destination within the graph horizon")]
    NoRoute,
    #[error("no candidate satisfies zone, deadline, thermal and capacity constraints")]
    NoFeasiblePlacement,
    #[error("unknown node {0}")]
    UnknownNode(u32),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("forecast horizon {forecast_s} s does not cover the plan horizon {plan_s} s")]
    HorizonMismatch { plan_s: f64, forecast_s: f64 },
    #[error("slot duration must be > 0, got {0}")]
    BadSlot(f64),
    #[error("contact plan line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("contact references node {0} without a forecast")]
    UnknownNode(u32),
}

/// Fatal conditions that abort a simulation run.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invariant violated: {invariant} ({detail})")]
    InvariantViolation { invariant: &'static str, detail: String },
    #[error("task {0:?} lost from the ledger")]
    LostTask(TaskId),
}
