//! Simulation core for multi-orbit space data center constellations:
//! orbital geometry, node power and health, traffic, contact graphs,
//! routing and placement, hierarchical orchestration and a deterministic
//! discrete-event engine.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod contact_graph;
pub mod engine;
pub mod error;
pub mod node_model;
pub mod orbits;
pub mod orchestrator;
pub mod power_thermal;
pub mod routing;
pub mod scenario;
pub mod traffic;

pub use contact_graph::{Contact, ContactKind, TimeExpandedGraph};
pub use engine::{compare, run, ComparisonReport, MetricsLedger, RunOptions};
pub use error::{ConfigError, GraphError, ModelError, RoutingError, SimError};
pub use node_model::NodeId;
pub use orbits::Layer;
pub use power_thermal::EnergyZone;
pub use scenario::{Mode, Scenario};
pub use traffic::{Task, TaskClass, TaskId};
