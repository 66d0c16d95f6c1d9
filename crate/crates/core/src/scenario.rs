//! Scenario files: a TOML document describing constellation, workloads,
//! node specs, policies and run settings.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contact_graph::{ConstellationNode, LinkConfig, NodePosition, OutageModel, RingSlot, StationRole};
use crate::error::ConfigError;
use crate::node_model::{DeratingCurve, NodeId, NodeSpec, RiskParams};
use crate::orbits::{CircularOrbit, Environment, GroundStation, Layer, PhysicalConstants, SunModel, GEO_ALTITUDE_KM};
use crate::orchestrator::{SlaPolicy, WatchdogConfig};
use crate::power_thermal::{PowerSpec, ThermalSpec, ZonePolicy, MAX_PHYSICS_STEP_S};
use crate::routing::CostWeights;
use crate::traffic::{HandsetCohort, Mmpp, TaskTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Satellites forward everything to the ground for processing.
    RelayOnly,
    #[default]
    InOrbitCompute,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::RelayOnly => "relay_only",
            Mode::InOrbitCompute => "in_orbit_compute",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relay_only" => Ok(Mode::RelayOnly),
            "in_orbit_compute" => Ok(Mode::InOrbitCompute),
            other => Err(format!(
                "unknown mode {other:?} (expected relay_only or in_orbit_compute)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvironmentConfig {
    pub earth_rotation: bool,
    pub sun: SunModel,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            earth_rotation: true,
            sun: SunModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellConfig {
    pub layer: Layer,
    pub altitude_km: f64,
    #[serde(default)]
    pub inclination_deg: f64,
    #[serde(default = "one_u32")]
    pub planes: u32,
    #[serde(default = "one_u32")]
    pub sats_per_plane: u32,
    /// Walker phasing factor.
    #[serde(default)]
    pub phasing: u32,
    #[serde(default)]
    pub raan_offset_deg: f64,
    #[serde(default)]
    pub phase_offset_deg: f64,
    /// RAAN span of the planes; 360 for a full Walker delta.
    #[serde(default = "full_circle")]
    pub raan_spread_deg: f64,
}

fn one_u32() -> u32 {
    1
}

fn full_circle() -> f64 {
    360.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstellationConfig {
    pub shells: Vec<ShellConfig>,
    pub lunar_relays: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationConfig {
    pub name: String,
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    #[serde(default = "ten")]
    pub min_elevation_deg: f64,
    #[serde(default = "gateway")]
    pub role: StationRole,
}

fn ten() -> f64 {
    10.0
}

fn gateway() -> StationRole {
    StationRole::Gateway
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortConfig {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    pub population: u64,
    pub mmpp: Mmpp,
    #[serde(default = "ten")]
    pub min_elevation_deg: f64,
    pub template: TaskTemplate,
}

/// Periodic imaging on a set of satellites; each image becomes a
/// compression task and a downlink transfer of its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EoWorkload {
    /// Node names; empty means every LEO satellite.
    #[serde(default)]
    pub satellites: Vec<String>,
    #[serde(default)]
    pub start_s: f64,
    pub period_s: f64,
    pub count: u32,
    pub input_bits: f64,
    pub compute_demand_units: f64,
}

/// Tasks injected at a named node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectedTasks {
    pub node: String,
    pub time_s: f64,
    #[serde(default = "one_u32")]
    pub count: u32,
    #[serde(default)]
    pub spacing_s: f64,
    pub template: TaskTemplate,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    pub eo: Vec<EoWorkload>,
    pub tasks: Vec<InjectedTasks>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NodeSpecConfig {
    pub compute_capacity: f64,
    pub storage_bits: f64,
    pub isl_terminals: u32,
    pub max_concurrent_tasks: u32,
    pub power: PowerSpec,
    pub thermal: ThermalSpec,
    pub initial_soc_fraction: f64,
    pub tid_tolerance_krad: f64,
    /// Relative spread of the sampled dose tolerance, uniform in ±spread.
    pub tid_tolerance_spread: f64,
    pub initial_tid_krad: f64,
    pub dose_rate_krad_per_year: f64,
    pub seu_rate_per_s: f64,
    pub derating: DeratingCurve,
}

impl Default for NodeSpecConfig {
    fn default() -> Self {
        Self {
            compute_capacity: 100.0,
            storage_bits: 1e13,
            isl_terminals: 4,
            max_concurrent_tasks: 4,
            power: PowerSpec::default(),
            thermal: ThermalSpec::default(),
            initial_soc_fraction: 0.9,
            tid_tolerance_krad: 100.0,
            tid_tolerance_spread: 0.0,
            initial_tid_krad: 0.0,
            dose_rate_krad_per_year: 1.0,
            seu_rate_per_s: 0.0,
            derating: DeratingCurve::default(),
        }
    }
}

impl NodeSpecConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.compute_capacity.is_finite() && self.compute_capacity > 0.0) {
            return Err(ConfigError::invalid("compute_capacity", "must be > 0"));
        }
        if self.max_concurrent_tasks == 0 {
            return Err(ConfigError::invalid("max_concurrent_tasks", "must be >= 1"));
        }
        self.power.validate().map_err(|e| e.within("power"))?;
        self.thermal.validate().map_err(|e| e.within("thermal"))?;
        if !(0.0..=1.0).contains(&self.initial_soc_fraction) {
            return Err(ConfigError::invalid("initial_soc_fraction", "must lie in [0, 1]"));
        }
        if !(self.tid_tolerance_krad > 0.0) {
            return Err(ConfigError::invalid("tid_tolerance_krad", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.tid_tolerance_spread) {
            return Err(ConfigError::invalid("tid_tolerance_spread", "must lie in [0, 1)"));
        }
        for (f, v) in [
            ("initial_tid_krad", self.initial_tid_krad),
            ("dose_rate_krad_per_year", self.dose_rate_krad_per_year),
            ("seu_rate_per_s", self.seu_rate_per_s),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::invalid(f, "must be >= 0"));
            }
        }
        self.derating.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NodeSpecs {
    pub leo: NodeSpecConfig,
    pub meo: NodeSpecConfig,
    pub geo: NodeSpecConfig,
    pub lunar: NodeSpecConfig,
    /// Processing rate of a gateway in relay mode, units per second.
    pub ground_compute_capacity: f64,
}

impl Default for NodeSpecs {
    fn default() -> Self {
        Self {
            leo: NodeSpecConfig::default(),
            meo: NodeSpecConfig {
                compute_capacity: 200.0,
                ..NodeSpecConfig::default()
            },
            geo: NodeSpecConfig {
                compute_capacity: 500.0,
                max_concurrent_tasks: 8,
                ..NodeSpecConfig::default()
            },
            lunar: NodeSpecConfig::default(),
            ground_compute_capacity: 10_000.0,
        }
    }
}

impl NodeSpecs {
    pub fn for_layer(&self, layer: Layer) -> &NodeSpecConfig {
        match layer {
            Layer::Leo | Layer::Ground => &self.leo,
            Layer::Meo => &self.meo,
            Layer::Geo => &self.geo,
            Layer::Lunar => &self.lunar,
        }
    }
}

/// Per-node adjustments, addressed by node name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeOverride {
    pub name: String,
    #[serde(default)]
    pub initial_tid_krad: Option<f64>,
    #[serde(default)]
    pub dose_rate_krad_per_year: Option<f64>,
    #[serde(default)]
    pub initial_soc_fraction: Option<f64>,
    #[serde(default)]
    pub seu_rate_per_s: Option<f64>,
    #[serde(default)]
    pub compute_capacity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrchestratorConfig {
    pub geo_epoch_s: f64,
    pub meo_epoch_s: f64,
    /// Defaults to twice the GEO epoch.
    pub planning_horizon_s: Option<f64>,
    pub slot_s: f64,
    pub load_balance_threshold: f64,
    pub max_forward_hops: u32,
    pub control_bundle_bits: f64,
    pub telemetry_bits: f64,
    pub geo_report_bits: f64,
    pub replication_risk_threshold: f64,
    pub checkpoint_interval_s: f64,
    pub sla: SlaPolicy,
    pub watchdog: WatchdogConfig,
    pub risk: RiskParams,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            geo_epoch_s: 300.0,
            meo_epoch_s: 60.0,
            planning_horizon_s: None,
            slot_s: 30.0,
            load_balance_threshold: 2.0,
            max_forward_hops: 3,
            control_bundle_bits: 8192.0,
            telemetry_bits: 4096.0,
            geo_report_bits: 65_536.0,
            replication_risk_threshold: 0.2,
            checkpoint_interval_s: 60.0,
            sla: SlaPolicy::default(),
            watchdog: WatchdogConfig::default(),
            risk: RiskParams::default(),
        }
    }
}

impl OrchestratorConfig {
    pub fn horizon_s(&self) -> f64 {
        self.planning_horizon_s.unwrap_or(2.0 * self.geo_epoch_s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (f, v) in [
            ("geo_epoch_s", self.geo_epoch_s),
            ("meo_epoch_s", self.meo_epoch_s),
            ("slot_s", self.slot_s),
            ("checkpoint_interval_s", self.checkpoint_interval_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::invalid(f, "must be > 0"));
            }
        }
        if !(self.horizon_s() >= self.geo_epoch_s) {
            return Err(ConfigError::invalid(
                "planning_horizon_s",
                "must cover at least one GEO epoch",
            ));
        }
        if !(self.load_balance_threshold >= 1.0) {
            return Err(ConfigError::invalid("load_balance_threshold", "must be >= 1"));
        }
        for (f, v) in [
            ("control_bundle_bits", self.control_bundle_bits),
            ("telemetry_bits", self.telemetry_bits),
            ("geo_report_bits", self.geo_report_bits),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::invalid(f, "must be >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.replication_risk_threshold) {
            return Err(ConfigError::invalid("replication_risk_threshold", "must lie in [0, 1]"));
        }
        self.sla.validate().map_err(|e| e.within("sla"))?;
        self.watchdog.validate().map_err(|e| e.within("watchdog"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub physics_step_s: f64,
    pub energy_sample_s: f64,
    /// Sampling step of the geometric contact search.
    pub contact_step_s: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            physics_step_s: MAX_PHYSICS_STEP_S,
            energy_sample_s: 60.0,
            contact_step_s: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeFailure {
    pub name: String,
    pub time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultConfig {
    /// Removes all feeder contact time inside the interval.
    pub feeder_blackout: Option<Interval>,
    pub node_failures: Vec<NodeFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub horizon_s: f64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "one_f64")]
    pub compression_ratio: f64,
    #[serde(default)]
    pub constants: PhysicalConstants,
    #[serde(default)]
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub constellation: ConstellationConfig,
    #[serde(default)]
    pub ground_stations: Vec<StationConfig>,
    #[serde(default)]
    pub links: LinkConfig,
    #[serde(default)]
    pub cohorts: Vec<CohortConfig>,
    #[serde(default)]
    pub workloads: WorkloadConfig,
    #[serde(default)]
    pub node_specs: NodeSpecs,
    #[serde(default)]
    pub node_overrides: Vec<NodeOverride>,
    #[serde(default)]
    pub zone_policy: ZonePolicy,
    #[serde(default)]
    pub cost_weights: CostWeights,
    #[serde(default)]
    pub outage_model: OutageModel,
    #[serde(default)]
    pub orchestrator: OrchestratorConfig,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub faults: FaultConfig,
}

fn one_f64() -> f64 {
    1.0
}

/// One materialized node of the scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSetup {
    pub node: ConstellationNode,
    pub name: String,
    pub spec: NodeSpec,
    pub config: NodeSpecConfig,
}

/// Configuration error with the line of the offending key, if found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocatedError {
    pub error: ConfigError,
    pub line: Option<usize>,
}

impl std::fmt::Display for LocatedError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.error),
            None => write!(f, "{}", self.error),
        }
    }
}

pub fn scenario_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl Scenario {
    /// Parses and validates. Every violation is reported.
    pub fn from_toml(text: &str) -> Result<Self, Vec<LocatedError>> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
            vec![LocatedError {
                error: ConfigError::invalid(line.map_or("scenario".into(), |l| field_at(text, l)), e.message()),
                line,
            }]
        })?;
        let errors = scenario.validate();
        if errors.is_empty() {
            Ok(scenario)
        } else {
            Err(errors
                .into_iter()
                .map(|error| LocatedError {
                    line: locate(text, &error.field),
                    error,
                })
                .collect())
        }
    }

    pub fn validate(&self) -> Vec<ConfigError> {
        let mut errs = Vec::new();
        let mut check = |r: Result<(), ConfigError>, section: &str| {
            if let Err(e) = r {
                errs.push(if section.is_empty() { e } else { e.within(section) });
            }
        };
        check(
            if self.horizon_s.is_finite() && self.horizon_s > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::invalid("horizon_s", "must be > 0"))
            },
            "",
        );
        check(
            if self.compression_ratio.is_finite() && self.compression_ratio >= 1.0 {
                Ok(())
            } else {
                Err(ConfigError::invalid("compression_ratio", "must be >= 1"))
            },
            "",
        );
        // constants validate with their own prefix
        check(self.constants.validate(), "");
        check(self.environment.sun.validate(), "");
        for (i, sh) in self.constellation.shells.iter().enumerate() {
            let r = (|| {
                if !sh.layer.is_orbital() {
                    return Err(ConfigError::invalid(
                        "layer",
                        format!("{} is not an orbital layer", sh.layer),
                    ));
                }
                if sh.planes == 0 || sh.sats_per_plane == 0 {
                    return Err(ConfigError::invalid("planes", "planes and sats_per_plane must be >= 1"));
                }
                CircularOrbit::new(sh.altitude_km, sh.inclination_deg, 0.0, 0.0, sh.layer).map(|_| ())
            })();
            check(r, &format!("constellation.shells[{i}]"));
        }
        let mut names = BTreeSet::new();
        for (i, gs) in self.ground_stations.iter().enumerate() {
            check(
                GroundStation::new(gs.latitude_deg, gs.longitude_deg, gs.min_elevation_deg).map(|_| ()),
                &format!("ground_stations[{i}]"),
            );
            if !names.insert(gs.name.clone()) {
                check(
                    Err(ConfigError::invalid(
                        "name",
                        format!("duplicate station name {:?}", gs.name),
                    )),
                    &format!("ground_stations[{i}]"),
                );
            }
        }
        check(validate_links(&self.links), "links");
        for (i, c) in self.cohorts.iter().enumerate() {
            let r = (|| {
                GroundStation::new(c.latitude_deg, c.longitude_deg, c.min_elevation_deg)?;
                c.mmpp.validate()?;
                c.template.validate().map_err(|e| e.within("template"))
            })();
            check(r, &format!("cohorts[{i}]"));
        }
        let node_names: BTreeSet<String> = self.node_setups_unchecked().into_iter().map(|n| n.name).collect();
        for (i, w) in self.workloads.eo.iter().enumerate() {
            let r = (|| {
                if !(w.period_s > 0.0 && w.input_bits > 0.0 && w.compute_demand_units >= 0.0 && w.start_s >= 0.0) {
                    return Err(ConfigError::invalid(
                        "period_s",
                        "period and input must be > 0, demand and start >= 0",
                    ));
                }
                for s in &w.satellites {
                    if !node_names.contains(s) {
                        return Err(ConfigError::invalid("satellites", format!("unknown node {s:?}")));
                    }
                }
                Ok(())
            })();
            check(r, &format!("workloads.eo[{i}]"));
        }
        for (i, t) in self.workloads.tasks.iter().enumerate() {
            let r = (|| {
                if !node_names.contains(&t.node) {
                    return Err(ConfigError::invalid("node", format!("unknown node {:?}", t.node)));
                }
                if !(t.time_s >= 0.0 && t.spacing_s >= 0.0) {
                    return Err(ConfigError::invalid("time_s", "time and spacing must be >= 0"));
                }
                t.template.validate().map_err(|e| e.within("template"))
            })();
            check(r, &format!("workloads.tasks[{i}]"));
        }
        for (layer, cfg) in [
            ("leo", &self.node_specs.leo),
            ("meo", &self.node_specs.meo),
            ("geo", &self.node_specs.geo),
            ("lunar", &self.node_specs.lunar),
        ] {
            check(cfg.validate(), &format!("node_specs.{layer}"));
        }
        if !(self.node_specs.ground_compute_capacity > 0.0) {
            check(
                Err(ConfigError::invalid("ground_compute_capacity", "must be > 0")),
                "node_specs",
            );
        }
        for (i, o) in self.node_overrides.iter().enumerate() {
            if !node_names.contains(&o.name) {
                check(
                    Err(ConfigError::invalid("name", format!("unknown node {:?}", o.name))),
                    &format!("node_overrides[{i}]"),
                );
            }
        }
        check(self.zone_policy.validate(), "zone_policy");
        check(self.cost_weights.validate(), "cost_weights");
        let om = &self.outage_model;
        if !(om.outage_rate_per_s >= 0.0 && om.reacquisition_mean_s >= 0.0) {
            check(
                Err(ConfigError::invalid("outage_rate_per_s", "rates must be >= 0")),
                "outage_model",
            );
        }
        check(self.orchestrator.validate(), "orchestrator");
        let e = &self.engine;
        if !(e.physics_step_s > 0.0 && e.physics_step_s <= MAX_PHYSICS_STEP_S) {
            check(
                Err(ConfigError::invalid(
                    "physics_step_s",
                    format!("must lie in (0, {MAX_PHYSICS_STEP_S}]"),
                )),
                "engine",
            );
        }
        for setup in self.node_setups_unchecked() {
            let limit = setup.spec.thermal.max_stable_step_s(&self.constants);
            if e.physics_step_s >= limit {
                check(
                    Err(ConfigError::invalid(
                        "physics_step_s",
                        format!("exceeds the thermal stability limit {limit:.3} s of {}", setup.name),
                    )),
                    "engine",
                );
                break;
            }
        }
        if !(e.energy_sample_s > 0.0 && e.contact_step_s > 0.0) {
            check(
                Err(ConfigError::invalid("energy_sample_s", "sampling steps must be > 0")),
                "engine",
            );
        }
        if let Some(b) = self.faults.feeder_blackout {
            if !(b.end_s > b.start_s && b.start_s >= 0.0) {
                check(
                    Err(ConfigError::invalid("feeder_blackout", "needs 0 <= start_s < end_s")),
                    "faults",
                );
            }
        }
        for (i, f) in self.faults.node_failures.iter().enumerate() {
            if !node_names.contains(&f.name) {
                check(
                    Err(ConfigError::invalid("name", format!("unknown node {:?}", f.name))),
                    &format!("faults.node_failures[{i}]"),
                );
            }
        }
        errs
    }

    pub fn environment(&self) -> Environment {
        Environment {
            constants: self.constants,
            earth_rotation: self.environment.earth_rotation,
            sun: self.environment.sun,
        }
    }

    /// Nodes in id order: shells, then ground stations, then lunar relays.
    /// Assumes a validated scenario.
    pub fn node_setups(&self) -> Vec<NodeSetup> {
        self.node_setups_unchecked()
    }

    fn node_setups_unchecked(&self) -> Vec<NodeSetup> {
        let mut out = Vec::new();
        let mut next = 0u32;
        let overrides: BTreeMap<&str, &NodeOverride> =
            self.node_overrides.iter().map(|o| (o.name.as_str(), o)).collect();
        let mut push = |out: &mut Vec<NodeSetup>, name: String, layer: Layer, position, ring| {
            let id = NodeId(next);
            next += 1;
            let mut cfg = self.node_specs.for_layer(layer).clone();
            if layer == Layer::Ground {
                cfg.compute_capacity = self.node_specs.ground_compute_capacity;
                cfg.max_concurrent_tasks = u32::MAX;
            }
            if let Some(o) = overrides.get(name.as_str()) {
                if let Some(v) = o.initial_tid_krad {
                    cfg.initial_tid_krad = v;
                }
                if let Some(v) = o.dose_rate_krad_per_year {
                    cfg.dose_rate_krad_per_year = v;
                }
                if let Some(v) = o.initial_soc_fraction {
                    cfg.initial_soc_fraction = v;
                }
                if let Some(v) = o.seu_rate_per_s {
                    cfg.seu_rate_per_s = v;
                }
                if let Some(v) = o.compute_capacity {
                    cfg.compute_capacity = v;
                }
            }
            out.push(NodeSetup {
                node: ConstellationNode {
                    id,
                    layer,
                    position,
                    ring,
                },
                spec: NodeSpec {
                    node_id: id,
                    name: name.clone(),
                    layer,
                    compute_capacity: cfg.compute_capacity,
                    storage_bits: cfg.storage_bits,
                    isl_terminals: cfg.isl_terminals,
                    power: cfg.power,
                    thermal: cfg.thermal,
                },
                name,
                config: cfg,
            });
        };
        for (si, sh) in self.constellation.shells.iter().enumerate() {
            let total = sh.planes * sh.sats_per_plane;
            for p in 0..sh.planes {
                for j in 0..sh.sats_per_plane {
                    let raan = sh.raan_offset_deg + sh.raan_spread_deg * p as f64 / sh.planes as f64;
                    let phase = sh.phase_offset_deg
                        + 360.0 * j as f64 / sh.sats_per_plane as f64
                        + 360.0 * (sh.phasing * p) as f64 / total as f64;
                    let altitude = if sh.layer == Layer::Geo {
                        GEO_ALTITUDE_KM
                    } else {
                        sh.altitude_km
                    };
                    let Ok(orbit) = CircularOrbit::new(altitude, sh.inclination_deg, raan, phase, sh.layer) else {
                        continue;
                    };
                    let name = format!("{}-s{si}-p{p}-{j}", sh.layer.as_str().to_lowercase());
                    let ring = RingSlot {
                        shell: si as u32,
                        plane: p,
                        index: j,
                        plane_size: sh.sats_per_plane,
                    };
                    push(&mut out, name, sh.layer, NodePosition::Orbit(orbit), Some(ring));
                }
            }
        }
        for gs in &self.ground_stations {
            let Ok(station) = GroundStation::new(gs.latitude_deg, gs.longitude_deg, gs.min_elevation_deg) else {
                continue;
            };
            push(
                &mut out,
                gs.name.clone(),
                Layer::Ground,
                NodePosition::Station(station, gs.role),
                None,
            );
        }
        for k in 0..self.constellation.lunar_relays {
            push(&mut out, format!("lunar-{k}"), Layer::Lunar, NodePosition::Lunar, None);
        }
        out
    }

    pub fn cohorts(&self) -> Vec<HandsetCohort> {
        self.cohorts
            .iter()
            .enumerate()
            .map(|(i, c)| HandsetCohort {
                cohort_id: i as u32,
                latitude_deg: c.latitude_deg,
                longitude_deg: c.longitude_deg,
                population: c.population,
                mmpp: c.mmpp,
                min_elevation_deg: c.min_elevation_deg,
                template: c.template,
            })
            .collect()
    }

    /// Resolved configuration with every default filled in.
    pub fn resolved(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("scenario serializes")
    }
}

fn validate_links(l: &LinkConfig) -> Result<(), ConfigError> {
    for (f, v) in [
        ("isl_rate_bps", l.isl_rate_bps),
        ("feeder_rate_bps", l.feeder_rate_bps),
        ("access_rate_bps", l.access_rate_bps),
        ("lunar_rate_bps", l.lunar_rate_bps),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(ConfigError::invalid(f, "must be > 0"));
        }
    }
    if !(l.grazing_margin_km >= 0.0 && l.lunar_owlt_s >= 0.0) {
        return Err(ConfigError::invalid(
            "grazing_margin_km",
            "margins and delays must be >= 0",
        ));
    }
    Ok(())
}

/// Dotted name of the key on 1-based `line`, prefixed by its table.
fn field_at(text: &str, line: usize) -> String {
    let lines: Vec<&str> = text.lines().collect();
    let header = lines[..line.min(lines.len())]
        .iter()
        .rev()
        .map(|l| l.trim())
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').to_string());
    let key = lines
        .get(line - 1)
        .and_then(|l| l.split_once('='))
        .map(|(k, _)| k.trim().to_string())
        .filter(|k| !k.starts_with('['));
    match (header, key) {
        (Some(h), Some(k)) => format!("{h}.{k}"),
        (Some(h), None) => h,
        (None, Some(k)) => k,
        (None, None) => "scenario".into(),
    }
}

/// Splits `a.b[2].c` into `[("a", None), ("b", Some(2)), ("c", None)]`.
pub fn parse_path(path: &str) -> Vec<(String, Option<usize>)> {
    path.split('.')
        .map(|seg| match seg.find('[') {
            Some(i) if seg.ends_with(']') => (seg[..i].to_string(), seg[i + 1..seg.len() - 1].parse().ok()),
            _ => (seg.to_string(), None),
        })
        .collect()
}

/// Best-effort line of the key named by a dotted field path.
pub fn locate(text: &str, field: &str) -> Option<usize> {
    let path = parse_path(field);
    let (leaf, _) = path.last()?;
    let lines: Vec<&str> = text.lines().collect();
    // find the deepest table header matching a prefix of the path
    let mut start = 0;
    let mut end = lines.len();
    for depth in (1..path.len()).rev() {
        let prefix: Vec<&str> = path[..depth].iter().map(|(k, _)| k.as_str()).collect();
        let header = prefix.join(".");
        let idx = path[depth - 1].1.unwrap_or(0);
        let found: Vec<usize> = lines
            .iter()
            .enumerate()
            .filter(|(_, l)| {
                let t = l.trim();
                t == format!("[{header}]") || t == format!("[[{header}]]")
            })
            .map(|(i, _)| i)
            .collect();
        if let Some(&h) = found.get(idx) {
            start = h + 1;
            end = lines[start..]
                .iter()
                .position(|l| l.trim_start().starts_with('['))
                .map_or(lines.len(), |p| start + p);
            break;
        }
    }
    let is_key = |l: &str, key: &str| {
        let t = l.trim_start();
        t.strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('='))
    };
    let keys: Vec<&str> = path.iter().rev().map(|(k, _)| k.as_str()).collect();
    for key in keys {
        if let Some(i) = (start..end).find(|&i| is_key(lines[i], key)) {
            return Some(i + 1);
        }
        if let Some(i) = (start..end).find(|&i| lines[i].contains(&format!("{key} ="))) {
            return Some(i + 1);
        }
    }
    let _ = leaf;
    (start > 0).then_some(start)
}

/// Sets `path` in a TOML document to `value`, creating tables on the way.
pub fn set_path(doc: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), ConfigError> {
    let segs = parse_path(path);
    let mut cur: &mut toml::Table = doc;
    for (i, (key, idx)) in segs.iter().enumerate() {
        let last = i + 1 == segs.len();
        match idx {
            None if last => {
                cur.insert(key.clone(), value);
                return Ok(());
            }
            None => {
                let entry = cur
                    .entry(key.clone())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                cur = entry
                    .as_table_mut()
                    .ok_or_else(|| ConfigError::invalid(path, format!("{key} is not a table")))?;
            }
            Some(n) => {
                let arr = cur
                    .get_mut(key)
                    .and_then(toml::Value::as_array_mut)
                    .ok_or_else(|| ConfigError::invalid(path, format!("{key} is not an array")))?;
                let item = arr
                    .get_mut(*n)
                    .ok_or_else(|| ConfigError::invalid(path, format!("{key} has no element {n}")))?;
                if last {
                    *item = value;
                    return Ok(());
                }
                cur = item
                    .as_table_mut()
                    .ok_or_else(|| ConfigError::invalid(path, format!("{key}[{n}] is not a table")))?;
            }
        }
    }
    Ok(())
}

/// Whether `path` names a field of the resolved scenario.
pub fn path_exists(resolved: &serde_json::Value, path: &str) -> bool {
    let mut cur = resolved;
    for (key, idx) in parse_path(path) {
        let Some(next) = cur.get(&key) else { return false };
        cur = match idx {
            Some(n) => match next.get(n) {
                Some(v) => v,
                None => return false,
            },
            None => next,
        };
    }
    true
}

/// Parses a command-line value as a TOML scalar, falling back to a string.
pub fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `key = value` overrides to scenario text and re-validates.
pub fn with_overrides(text: &str, overrides: &[(String, toml::Value)]) -> Result<Scenario, Vec<LocatedError>> {
    let base = Scenario::from_toml(text)?;
    let resolved = base.resolved();
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| {
        vec![LocatedError {
            error: ConfigError::invalid("scenario", e.message()),
            line: None,
        }]
    })?;
    for (k, v) in overrides {
        if !path_exists(&resolved, k) {
            return Err(vec![LocatedError {
                error: ConfigError::invalid(k.clone(), "no such field in the scenario schema"),
                line: None,
            }]);
        }
        set_path(&mut doc, k, v.clone()).map_err(|error| vec![LocatedError { error, line: None }])?;
    }
    let edited = toml::to_string(&doc).map_err(|e| {
        vec![LocatedError {
            error: ConfigError::invalid("scenario", e.to_string()),
            line: None,
        }]
    })?;
    Scenario::from_toml(&edited)
}

/// Bundled example: a small LEO shell under MEO and GEO relays with two
/// gateways, a handset cohort and an imaging workload.
pub const EXAMPLE_SCENARIO: &str = include_str!("../scenarios/example.toml");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_is_valid() {
        let s = Scenario::from_toml(EXAMPLE_SCENARIO).unwrap();
        assert!(!s.node_setups().is_empty());
        let ids: Vec<u32> = s.node_setups().iter().map(|n| n.spec.node_id.0).collect();
        assert_eq!(ids, (0..ids.len() as u32).collect::<Vec<_>>());
    }

    #[test]
    fn negative_altitude_names_field() {
        let text = EXAMPLE_SCENARIO.replacen("altitude_km = 550.0", "altitude_km = -550.0", 1);
        let errs = Scenario::from_toml(&text).unwrap_err();
        assert!(
            errs.iter()
                .any(|e| e.error.field == "constellation.shells[0].altitude_km"),
            "{errs:?}"
        );
        let line = errs[0].line.unwrap();
        assert!(text.lines().nth(line - 1).unwrap().contains("-550.0"));
    }

    #[test]
    fn zone_thresholds_cite_invariant() {
        let text = format!("{EXAMPLE_SCENARIO}\n[zone_policy]\nr_red = 0.5\nr_green = 0.4\n");
        let errs = Scenario::from_toml(&text).unwrap_err();
        let e = errs.iter().find(|e| e.error.field.starts_with("zone_policy")).unwrap();
        assert!(e.error.message.contains("r_red < r_green"));
        assert!(e.line.is_some());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{EXAMPLE_SCENARIO}\n[engine]\nturbo = true\n");
        let errs = Scenario::from_toml(&text).unwrap_err();
        assert!(errs[0].error.message.contains("turbo"), "{errs:?}");
        assert!(errs[0].line.is_some());
    }

    #[test]
    fn every_violation_listed() {
        let text = EXAMPLE_SCENARIO
            .replacen("altitude_km = 550.0", "altitude_km = -1.0", 1)
            .replacen("horizon_s = ", "horizon_s = -", 1);
        let errs = Scenario::from_toml(&text).unwrap_err();
        assert!(errs.len() >= 2, "{errs:?}");
    }

    #[test]
    fn overrides_apply_and_check_keys() {
        let s = with_overrides(EXAMPLE_SCENARIO, &[("cost_weights.w_risk".into(), parse_value("7"))]).unwrap();
        assert_eq!(s.cost_weights.w_risk, 7.0);
        let s = with_overrides(EXAMPLE_SCENARIO, &[("compression_ratio".into(), parse_value("10"))]).unwrap();
        assert_eq!(s.compression_ratio, 10.0);
        assert!(with_overrides(EXAMPLE_SCENARIO, &[("nope.x".into(), parse_value("1"))]).is_err());
    }

    #[test]
    fn hash_tracks_edits() {
        assert_ne!(scenario_hash("a"), scenario_hash("b"));
        assert_eq!(scenario_hash("a").len(), 64);
    }

    #[test]
    fn paths_parse() {
        assert_eq!(
            parse_path("a.b[2].c"),
            vec![("a".into(), None), ("b".into(), Some(2)), ("c".into(), None)]
        );
    }
}
