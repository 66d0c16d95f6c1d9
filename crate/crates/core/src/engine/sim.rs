//! The single-run simulator.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;

use super::events::{EventQueue, Priority, RngStreams, RNG_ALGORITHM};
use super::ledger::{
    latency_quantile, Aggregates, EnergySample, LinkRecord, MetricsLedger, OrchestrationRecord, Summary, TaskRecord,
    TaskStatus, Traffic,
};
use crate::contact_graph::{
    apply_outages, blackout_feeders, build_contact_plan, build_time_expanded_graph, Contact, ContactKind,
    ForecastSample, ForecastSet, NodeForecast, NodePosition, NodeProfile, StationRole, TimeExpandedGraph,
};
use crate::error::SimError;
use crate::node_model::{accumulate_dose, hazard_rate, sample_seu_faults, Node, NodeHealth, NodeId, TaskExecution};
use crate::orbits::{
    in_eclipse, predicate_windows, visibility, CircularOrbit, Environment, GroundStation, Layer, WINDOW_TOLERANCE_S,
};
use crate::orchestrator::{
    degradation_watchdog, geo_global_plan, leo_local_decide, meo_regional_rebalance, sla_monitor, table_validity,
    AccessAudit, AccessScope, ControllerTier, GlobalPlanInput, HealthSnapshot, LatencyRecord, LocalAction, LocalView,
    PendingTask, PrecomputedTable, QueueSnapshot, QueuedTask, RoleMap, RunningTask, SlaReport,
};
use crate::power_thermal::{
    compute_zone, harvest_power, lightweight_limit_units, step_energy_thermal, zone_permits, EnergyZone,
    PowerThermalState, ZoneForecast,
};
use crate::routing::{
    earliest_delivery_route, earliest_delivery_to_any, place_task, replicate_decision, CostWeights, PlacementQuery,
    Reservations, Route,
};
use crate::scenario::{Mode, NodeSpecConfig, Scenario};
use crate::traffic::{
    assign_serving_satellite, detect_handover, generate_arrivals, generate_eo_workload, HandsetCohort, ImagingEvent,
    Origin, SatelliteView, Task, TaskClass, TaskId, TaskIdAllocator,
};

/// A task, where it sits, and each placement with its route and log detail.
type Dispatch = (TaskId, NodeId, Vec<(NodeId, Route, String)>);

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces the scenario seed.
    pub seed: Option<u64>,
    /// Replaces the geometric contact plan.
    pub contact_plan: Option<Vec<Contact>>,
    /// Hash recorded in the summary; defaults to the hash of the resolved
    /// configuration.
    pub scenario_hash: Option<String>,
}

#[derive(Debug, Clone)]
enum Ev {
    Physics,
    GeoEpoch,
    MeoEpoch,
    Arrival(usize),
    BundleAt(u64),
    Complete(u64),
    NodeFault(NodeId),
}

#[derive(Debug, Clone)]
struct Job {
    task: TaskId,
    hops_left: u32,
    placed: bool,
    exec: Option<TaskExecution>,
    stale_flagged: bool,
}

#[derive(Debug, Clone)]
enum Cargo {
    Input {
        task: TaskId,
        hops_left: u32,
        placed: bool,
        exec: Option<TaskExecution>,
    },
    Result(TaskId),
    Storage(TaskId),
    Uplink(TaskId),
    Table(Box<PrecomputedTable>),
    Telemetry,
}

impl Cargo {
    fn task(&self) -> Option<TaskId> {
        match self {
            Cargo::Input { task, .. } | Cargo::Result(task) | Cargo::Storage(task) | Cargo::Uplink(task) => Some(*task),
            Cargo::Table(_) | Cargo::Telemetry => None,
        }
    }

    fn traffic(&self) -> Traffic {
        match self {
            Cargo::Table(_) | Cargo::Telemetry => Traffic::Control,
            _ => Traffic::Payload,
        }
    }
}

#[derive(Debug, Clone)]
struct Bundle {
    bits: f64,
    cargo: Cargo,
    at: NodeId,
    dests: Vec<NodeId>,
    /// Remaining planned hops as (next node, planned window end).
    path: VecDeque<(NodeId, f64)>,
}

struct SimNode {
    name: String,
    layer: Layer,
    cfg: NodeSpecConfig,
    node: Node,
    orbit: Option<CircularOrbit>,
    powered: bool,
    pt: PowerThermalState,
    eclipses: Vec<(f64, f64)>,
    queue: VecDeque<Job>,
    degrading: bool,
    tx_j: f64,
    soc0: f64,
    net_wh: f64,
    clamp_wh: f64,
    table: Option<PrecomputedTable>,
    red_s: f64,
}

impl SimNode {
    fn alive(&self) -> bool {
        self.node.is_alive()
    }

    fn eclipsed(&self, t: f64) -> bool {
        self.eclipses.iter().any(|&(a, b)| a <= t && t < b)
    }

    fn eclipse_remaining(&self, t: f64) -> f64 {
        self.eclipses
            .iter()
            .find(|&&(a, b)| a <= t && t < b)
            .map_or(0.0, |&(_, b)| b - t)
    }

    /// Sunlit seconds inside `[a, b)`.
    fn sunlit(&self, a: f64, b: f64) -> f64 {
        let shade: f64 = self.eclipses.iter().map(|&(x, y)| (y.min(b) - x.max(a)).max(0.0)).sum();
        (b - a - shade).max(0.0)
    }

    fn lightweight_limit(&self, s: &Scenario) -> f64 {
        lightweight_limit_units(&s.zone_policy, self.node.capacity())
    }

    fn admits(&self, s: &Scenario, class: TaskClass, demand: f64) -> bool {
        if !self.alive() || self.degrading || self.node.running.len() >= self.cfg.max_concurrent_tasks as usize {
            return false;
        }
        if self.layer == Layer::Ground {
            return true;
        }
        if self.layer == Layer::Lunar && !class.flags().delay_tolerant_ok {
            return false;
        }
        let thermal_ok = self.pt.thermal_headroom >= s.zone_policy.thermal_gate || class == TaskClass::Housekeeping;
        thermal_ok && zone_permits(self.pt.zone, class, demand, self.lightweight_limit(s))
    }
}

struct TaskState {
    task: Task,
    rec: TaskRecord,
    copies: u32,
    computed: bool,
    cohort: Option<usize>,
    children: Vec<TaskId>,
    awaiting_parent: bool,
}

#[derive(Default)]
struct Counters {
    feeder_payload_bits: f64,
    feeder_control_bits: f64,
    isl_bits: f64,
    task_energy_j: f64,
    handovers: u64,
    red_violations: u64,
    stale_flags: u64,
    unprotected: u64,
    sla_breaches: u64,
    sla_risk: u64,
    degraded_views: u64,
    tables_delivered: u64,
    control_dropped: u64,
    node_failures: u64,
    replicas: u64,
    migrations: u64,
    forwards: u64,
    physics_steps: u64,
}

pub(crate) struct Sim<'a> {
    s: &'a Scenario,
    env: Environment,
    seed: u64,
    horizon: f64,
    nodes: Vec<SimNode>,
    index: BTreeMap<NodeId, usize>,
    nominal: Vec<Contact>,
    realized: BTreeMap<(NodeId, NodeId), Vec<Contact>>,
    link_free: BTreeMap<(NodeId, NodeId), f64>,
    feeder_windows: BTreeMap<NodeId, Vec<(f64, f64)>>,
    gateways: Vec<NodeId>,
    roles: RoleMap,
    cohorts: Vec<HandsetCohort>,
    serving: Vec<Option<NodeId>>,
    arrivals: Vec<Task>,
    tasks: BTreeMap<TaskId, TaskState>,
    bundles: BTreeMap<u64, Bundle>,
    next_bundle: u64,
    stored: BTreeSet<u64>,
    completing: BTreeMap<u64, (TaskId, NodeId)>,
    next_completion: u64,
    pending_global: Vec<(TaskId, NodeId)>,
    graph: Option<TimeExpandedGraph>,
    weights: CostWeights,
    last_epoch: f64,
    queue: EventQueue<Ev>,
    rng: RngStreams,
    audit: AccessAudit,
    c: Counters,
    next_sample: f64,
    energy: Vec<EnergySample>,
    links: Vec<LinkRecord>,
    orch: Vec<OrchestrationRecord>,
    sla_reports: Vec<(f64, SlaReport)>,
}

fn invariant(name: &'static str, detail: impl Into<String>) -> SimError {
    SimError::InvariantViolation {
        invariant: name,
        detail: detail.into(),
    }
}

impl<'a> Sim<'a> {
    pub(crate) fn new(s: &'a Scenario, opts: &RunOptions) -> Result<Self, SimError> {
        if let Some(e) = s.validate().into_iter().next() {
            return Err(SimError::Config(e));
        }
        let seed = opts.seed.unwrap_or(s.seed);
        let env = s.environment();
        let horizon = s.horizon_s;
        let mut rng = RngStreams::new(seed);
        let setups = s.node_setups();
        let consts = env.constants;

        let nominal = match &opts.contact_plan {
            Some(p) => p.clone(),
            None => {
                let cn: Vec<_> = setups.iter().map(|n| n.node).collect();
                build_contact_plan(&cn, &s.links, &env, horizon, s.engine.contact_step_s)
            }
        };
        let mut nodes = Vec::with_capacity(setups.len());
        let mut index = BTreeMap::new();
        for (i, st) in setups.iter().enumerate() {
            let layer = st.spec.layer;
            let orbit = match st.node.position {
                NodePosition::Orbit(o) => Some(o),
                _ => None,
            };
            let cfg = st.config.clone();
            // always draw so stream use does not depend on the spread
            let u: f64 = rng.tid_tolerance.random_range(-1.0..1.0);
            let tolerance = cfg.tid_tolerance_krad * (1.0 + cfg.tid_tolerance_spread * u);
            let health = if layer == Layer::Ground {
                NodeHealth::new(0.0, f64::MAX, 0.0, cfg.derating.clone())
            } else {
                NodeHealth::new(
                    cfg.initial_tid_krad,
                    tolerance,
                    cfg.seu_rate_per_s,
                    cfg.derating.clone(),
                )
            };
            let eclipses = match orbit {
                Some(o) => predicate_windows(
                    |t| in_eclipse(&o.propagate(t, &consts), &env.sun.direction(t), &consts),
                    horizon,
                    s.engine.contact_step_s.min(horizon),
                    WINDOW_TOLERANCE_S,
                ),
                None => Vec::new(),
            };
            let pt = PowerThermalState::initial(&st.spec.power, &st.spec.thermal, cfg.initial_soc_fraction, &consts);
            index.insert(st.spec.node_id, i);
            nodes.push(SimNode {
                name: st.name.clone(),
                layer,
                cfg,
                node: Node::new(st.spec.clone(), health),
                orbit,
                powered: layer != Layer::Ground,
                soc0: pt.soc_wh,
                pt,
                eclipses,
                queue: VecDeque::new(),
                degrading: false,
                tx_j: 0.0,
                net_wh: 0.0,
                clamp_wh: 0.0,
                table: None,
                red_s: 0.0,
            });
        }
        for c in &nominal {
            for id in [c.src, c.dst] {
                if !index.contains_key(&id) {
                    return Err(SimError::Graph(crate::error::GraphError::UnknownNode(id.0)));
                }
            }
        }
        let mut realized_plan = apply_outages(&nominal, &s.outage_model, &mut rng.outages);
        if let Some(b) = s.faults.feeder_blackout {
            realized_plan = blackout_feeders(&realized_plan, b.start_s, b.end_s);
        }
        let mut realized: BTreeMap<(NodeId, NodeId), Vec<Contact>> = BTreeMap::new();
        for c in &realized_plan {
            realized.entry((c.src, c.dst)).or_default().push(*c);
        }
        for v in realized.values_mut() {
            v.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        }
        let mut feeder_windows: BTreeMap<NodeId, Vec<(f64, f64)>> = BTreeMap::new();
        for c in nominal.iter().filter(|c| c.kind == ContactKind::Feeder) {
            feeder_windows.entry(c.src).or_default().push((c.start_s, c.end_s));
        }
        let gateways: Vec<NodeId> = setups
            .iter()
            .filter(|n| matches!(n.node.position, NodePosition::Station(_, StationRole::Gateway)))
            .map(|n| n.spec.node_id)
            .collect();
        let roles = RoleMap {
            layers: setups.iter().map(|n| (n.spec.node_id, n.spec.layer)).collect(),
            gateways: gateways.clone(),
        };
        let cohorts = s.cohorts();
        let serving = vec![None; cohorts.len()];

        let mut sim = Sim {
            s,
            env,
            seed,
            horizon,
            nodes,
            index,
            nominal,
            realized,
            link_free: BTreeMap::new(),
            feeder_windows,
            gateways,
            roles,
            cohorts,
            serving,
            arrivals: Vec::new(),
            tasks: BTreeMap::new(),
            bundles: BTreeMap::new(),
            next_bundle: 0,
            stored: BTreeSet::new(),
            completing: BTreeMap::new(),
            next_completion: 0,
            pending_global: Vec::new(),
            graph: None,
            weights: s.cost_weights,
            last_epoch: 0.0,
            queue: EventQueue::default(),
            rng,
            audit: AccessAudit::default(),
            c: Counters::default(),
            next_sample: 0.0,
            energy: Vec::new(),
            links: Vec::new(),
            orch: Vec::new(),
            sla_reports: Vec::new(),
        };
        sim.generate_traffic()?;
        Ok(sim)
    }

    fn generate_traffic(&mut self) -> Result<(), SimError> {
        let s = self.s;
        let mut ids = TaskIdAllocator::default();
        let mut all = Vec::new();
        for c in &self.cohorts {
            all.extend(generate_arrivals(c, 0.0, self.horizon, &mut ids, &mut self.rng.traffic));
        }
        let name_to_id: BTreeMap<&str, NodeId> = self.nodes.iter().map(|n| (n.name.as_str(), n.node.id())).collect();
        for w in &s.workloads.eo {
            let sats: Vec<NodeId> = if w.satellites.is_empty() {
                self.nodes
                    .iter()
                    .filter(|n| n.layer == Layer::Leo)
                    .map(|n| n.node.id())
                    .collect()
            } else {
                w.satellites.iter().map(|n| name_to_id[n.as_str()]).collect()
            };
            for sat in sats {
                let schedule: Vec<ImagingEvent> = (0..w.count)
                    .map(|k| ImagingEvent {
                        time_s: w.start_s + k as f64 * w.period_s,
                        input_bits: w.input_bits,
                        compute_demand_units: w.compute_demand_units,
                    })
                    .filter(|e| e.time_s < self.horizon)
                    .collect();
                all.extend(generate_eo_workload(sat, &schedule, s.compression_ratio, &mut ids)?);
            }
        }
        for inj in &s.workloads.tasks {
            let node = name_to_id[inj.node.as_str()];
            for k in 0..inj.count {
                let t = inj.time_s + k as f64 * inj.spacing_s;
                if t >= self.horizon {
                    continue;
                }
                let tpl = &inj.template;
                all.push(Task {
                    id: ids.next_id(),
                    class: tpl.class,
                    arrival_time_s: t,
                    origin: Origin::Node(node),
                    input_bits: tpl.input_bits,
                    compute_demand_units: tpl.compute_demand_units,
                    output_bits: tpl.output_bits,
                    deadline_s: tpl.deadline_s,
                    replication_k: tpl.replication_k,
                    parent: None,
                });
            }
        }
        // stable by arrival then id
        all.sort_by(|a, b| a.arrival_time_s.total_cmp(&b.arrival_time_s).then(a.id.cmp(&b.id)));
        for (i, t) in all.iter().enumerate() {
            self.queue.push(t.arrival_time_s, Priority::Traffic, Ev::Arrival(i));
        }
        self.arrivals = all;
        Ok(())
    }

    fn node(&self, id: NodeId) -> &SimNode {
        &self.nodes[self.index[&id]]
    }

    fn node_mut(&mut self, id: NodeId) -> &mut SimNode {
        let i = self.index[&id];
        &mut self.nodes[i]
    }

    fn in_orbit(&self) -> bool {
        self.s.mode == Mode::InOrbitCompute
    }

    #[allow(clippy::too_many_arguments)]
    fn log(
        &mut self,
        t: f64,
        tier: &str,
        action: &str,
        task: Option<TaskId>,
        from: Option<NodeId>,
        to: Option<NodeId>,
        detail: String,
    ) {
        self.orch.push(OrchestrationRecord {
            time_s: t,
            tier: tier.into(),
            action: action.into(),
            task,
            from,
            to,
            detail,
        });
    }

    pub(crate) fn run(mut self) -> Result<MetricsLedger, SimError> {
        self.queue.push(0.0, Priority::Physics, Ev::Physics);
        self.queue.push(0.0, Priority::Control, Ev::GeoEpoch);
        self.queue
            .push(self.s.orchestrator.meo_epoch_s, Priority::Control, Ev::MeoEpoch);
        let mut faults: Vec<(f64, NodeId)> = Vec::new();
        for f in &self.s.faults.node_failures {
            let id = self
                .nodes
                .iter()
                .find(|n| n.name == f.name)
                .map(|n| n.node.id())
                .expect("validated");
            faults.push((f.time_s, id));
        }
        for (t, id) in faults {
            self.queue.push(t, Priority::Physics, Ev::NodeFault(id));
        }
        while let Some(ev) = self.queue.pop() {
            if ev.time_s >= self.horizon {
                break;
            }
            let now = ev.time_s;
            match ev.payload {
                Ev::Physics => self.physics(now)?,
                Ev::GeoEpoch => self.geo_epoch(now)?,
                Ev::MeoEpoch => self.meo_epoch(now),
                Ev::Arrival(i) => self.arrival(now, i),
                Ev::BundleAt(id) => self.bundle_at(now, id),
                Ev::Complete(id) => self.complete(now, id),
                Ev::NodeFault(id) => self.fail_node(now, id, "injected"),
            }
        }
        self.check_locations()?;
        Ok(self.finish())
    }

    // ---------------------------------------------------------------- physics

    fn serving_sat(&self, cohort: usize, t: f64) -> Option<NodeId> {
        let views: Vec<SatelliteView> = self
            .nodes
            .iter()
            .filter(|n| n.layer == Layer::Leo)
            .filter_map(|n| {
                n.orbit.map(|o| SatelliteView {
                    id: n.node.id(),
                    layer: n.layer,
                    state: o.propagate(t, &self.env.constants),
                    alive: n.alive(),
                })
            })
            .collect();
        assign_serving_satellite(&self.cohorts[cohort], &views, t, &self.env)
    }

    fn access_owlt(&self, cohort: usize, sat: NodeId, t: f64) -> f64 {
        let c = &self.cohorts[cohort];
        let Some(o) = self.node(sat).orbit else { return 0.0 };
        let gs = GroundStation {
            latitude_deg: c.latitude_deg,
            longitude_deg: c.longitude_deg,
            min_elevation_deg: 0.0,
        };
        visibility(&o.propagate(t, &self.env.constants), &gs, t, &self.env).slant_range_km
            / self.env.constants.speed_of_light_km_s
    }

    fn physics(&mut self, now: f64) -> Result<(), SimError> {
        let dt = self.s.engine.physics_step_s.min(self.horizon - now);
        if now >= self.next_sample {
            self.sample_energy(now);
            self.next_sample += self.s.engine.energy_sample_s;
        }
        for k in 0..self.cohorts.len() {
            let cur = self.serving_sat(k, now);
            if detect_handover(k as u32, self.serving[k], cur, now).is_some() {
                self.c.handovers += 1;
            }
            self.serving[k] = cur;
        }
        let ids: Vec<NodeId> = self.nodes.iter().map(|n| n.node.id()).collect();
        for id in ids {
            self.step_node(now, dt, id)?;
        }
        self.c.physics_steps += 1;
        if now + dt < self.horizon {
            self.queue.push(now + dt, Priority::Physics, Ev::Physics);
        }
        Ok(())
    }

    fn refresh_zone(&mut self, id: NodeId, now: f64) {
        let s = self.s;
        let n = self.node_mut(id);
        if !n.powered {
            return;
        }
        let f = ZoneForecast {
            eclipse_remaining_s: n.eclipse_remaining(now),
            time_to_next_contact_s: 0.0,
            projected_load_w: n.pt.load_w,
        };
        n.pt.zone = compute_zone(
            n.pt.soc_wh,
            n.pt.thermal_headroom,
            n.node.spec.power.battery_capacity_wh,
            &s.zone_policy,
            &f,
        );
    }

    fn step_node(&mut self, now: f64, dt: f64, id: NodeId) -> Result<(), SimError> {
        let s = self.s;
        if !self.node(id).alive() {
            return Ok(());
        }
        self.refresh_zone(id, now);
        let zone = self.node(id).pt.zone;
        if self.node(id).powered && zone == EnergyZone::Red {
            self.node_mut(id).red_s += dt;
            // suspend everything but housekeeping
            let n = self.node_mut(id);
            let (keep, suspend): (Vec<_>, Vec<_>) = n
                .node
                .running
                .drain(..)
                .partition(|e| e.class == TaskClass::Housekeeping);
            n.node.running = keep;
            let mut suspended = Vec::new();
            for e in suspend.into_iter().rev() {
                suspended.push(e.task_id);
                n.queue.push_front(Job {
                    task: e.task_id,
                    hops_left: 0,
                    placed: true,
                    exec: Some(e),
                    stale_flagged: false,
                });
            }
            for t in suspended {
                self.log(now, "leo_local", "suspend_red", Some(t), Some(id), None, String::new());
            }
        }
        self.start_jobs(now, id);
        let n = self.node(id);
        if n.powered
            && n.pt.zone == EnergyZone::Red
            && n.node.running.iter().any(|e| e.class != TaskClass::Housekeeping)
        {
            self.c.red_violations += 1;
        }
        let tx_load = if dt > 0.0 { self.node(id).tx_j / dt } else { 0.0 };
        let cp = s.orchestrator.checkpoint_interval_s;
        let n = self.node_mut(id);
        n.tx_j = 0.0;
        let step = n.node.execute_step(dt, tx_load, cp);
        let compute_j = (step.load_w - n.node.spec.power.p_idle_w - tx_load).max(0.0) * dt;
        for (exec, offset) in step.completed {
            let cid = self.next_completion;
            self.next_completion += 1;
            self.completing.insert(cid, (exec.task_id, id));
            self.queue.push(now + offset, Priority::Completion, Ev::Complete(cid));
        }
        self.c.task_energy_j += compute_j;
        let i = self.index[&id];
        let n = &mut self.nodes[i];
        if n.powered {
            let eclipsed = n.eclipsed(now);
            let out = step_energy_thermal(
                &n.pt,
                &n.node.spec.power,
                &n.node.spec.thermal,
                step.load_w,
                eclipsed,
                dt,
                &s.constants,
            )
            .map_err(|e| invariant("thermal_step", format!("{}: {e}", n.name)))?;
            n.net_wh += (out.state.harvest_w - out.state.load_w) * dt / 3600.0;
            n.clamp_wh += out.clamp_adjustment_wh();
            let zone = n.pt.zone;
            n.pt = out.state;
            n.pt.zone = zone;
            let cap = n.node.spec.power.battery_capacity_wh;
            if !(n.pt.soc_wh.is_finite() && n.pt.soc_wh >= 0.0 && n.pt.soc_wh <= cap * (1.0 + 1e-12)) {
                return Err(invariant(
                    "soc_range",
                    format!("{} soc {} Wh at t={now}", n.name, n.pt.soc_wh),
                ));
            }
            let before = n.node.health.failed;
            n.node.health = accumulate_dose(&n.node.health, n.cfg.dose_rate_krad_per_year, dt);
            let faults = sample_seu_faults(&n.node.health, dt, &mut self.rng.seu);
            if faults > 0 {
                let i = self.index[&id];
                self.nodes[i].node.apply_seu_faults(faults, &mut self.rng.seu);
            }
            if !before && self.node(id).node.health.failed {
                self.fail_node(now + dt, id, "dose");
            }
        }
        Ok(())
    }

    fn local_view(&self, id: NodeId, now: f64) -> LocalView {
        let n = self.node(id);
        LocalView {
            node_id: id,
            now_s: now,
            zone: n.pt.zone,
            thermal_headroom: n.pt.thermal_headroom,
            capacity_free: n.alive() && !n.degrading && n.node.running.len() < n.cfg.max_concurrent_tasks as usize,
            lightweight_limit: n.lightweight_limit(self.s),
        }
    }

    fn start_jobs(&mut self, now: f64, id: NodeId) {
        let s = self.s;
        let mut i = 0;
        while i < self.node(id).queue.len() {
            let job = self.node(id).queue[i].clone();
            let Some(st) = self.tasks.get(&job.task) else {
                self.node_mut(id).queue.remove(i);
                continue;
            };
            let (class, demand, deadline) = (st.task.class, st.task.compute_demand_units, st.task.absolute_deadline());
            if class.flags().delay_sensitive && deadline.is_some_and(|d| now > d) {
                self.node_mut(id).queue.remove(i);
                self.drop_copy(now, job.task, "deadline_expired");
                continue;
            }
            if self.node(id).admits(s, class, demand) {
                self.node_mut(id).queue.remove(i);
                let exec = match job.exec {
                    Some(e) => e.resume(id, now),
                    None => TaskExecution::new(job.task, class, demand, id, now),
                };
                self.node_mut(id).node.running.push(exec);
                let rec = &mut self.tasks.get_mut(&job.task).expect("present").rec;
                rec.start_s.get_or_insert(now);
                rec.execution_node = Some(id);
                continue;
            }
            if self.in_orbit() && self.node(id).layer == Layer::Leo && !job.placed && job.hops_left > 0 {
                let view = self.local_view(id, now);
                let table = self.node(id).table.clone();
                let action = leo_local_decide(&view, class, demand, &s.zone_policy, table.as_ref(), &mut self.audit);
                match action {
                    LocalAction::Forward { next_hop, .. } => {
                        self.node_mut(id).queue.remove(i);
                        self.forward(now, id, next_hop, job.task, job.hops_left - 1);
                        continue;
                    }
                    LocalAction::Queue { stale_table: true } if !job.stale_flagged => {
                        self.c.stale_flags += 1;
                        self.node_mut(id).queue[i].stale_flagged = true;
                        self.log(
                            now,
                            "leo_local",
                            "stale_table",
                            Some(job.task),
                            Some(id),
                            None,
                            String::new(),
                        );
                    }
                    _ => {}
                }
            }
            i += 1;
        }
    }

    fn sample_energy(&mut self, now: f64) {
        for n in &self.nodes {
            if !n.powered {
                continue;
            }
            let cap = n.node.spec.power.battery_capacity_wh;
            self.energy.push(EnergySample {
                time_s: now,
                node: n.node.id(),
                soc_wh: n.pt.soc_wh,
                soc_fraction: n.pt.soc_wh / cap,
                harvest_w: n.pt.harvest_w,
                load_w: n.pt.load_w,
                radiator_k: n.pt.radiator_temperature_k,
                zone: n.pt.zone.as_str().into(),
                eclipsed: n.eclipsed(now),
                dose_fraction: n.node.health.dose_fraction(),
                alive: n.alive(),
                running: n.node.running.len(),
                running_mission: n
                    .node
                    .running
                    .iter()
                    .filter(|e| e.class != TaskClass::Housekeeping)
                    .count(),
                queued: n.queue.len(),
            });
        }
    }

    // ------------------------------------------------------------------ tasks

    fn arrival(&mut self, now: f64, i: usize) {
        let task = self.arrivals[i].clone();
        let (origin, cohort) = match task.origin {
            Origin::Node(n) => (format!("node:{}", n.0), None),
            Origin::Cohort(c) => (format!("cohort:{c}"), Some(c as usize)),
        };
        let rec = TaskRecord {
            task_id: task.id,
            class: task.class,
            origin,
            arrival_s: now,
            status: TaskStatus::InFlight,
            execution_node: None,
            start_s: None,
            completion_s: None,
            latency_s: None,
            deadline_met: None,
            forwards: 0,
            migrations: 0,
            replicas: 1,
            miss_reason: None,
        };
        let id = task.id;
        let parent = task.parent;
        self.tasks.insert(
            id,
            TaskState {
                task: task.clone(),
                rec,
                copies: 1,
                computed: false,
                cohort,
                children: Vec::new(),
                awaiting_parent: false,
            },
        );
        if let Some(p) = parent {
            let parent_status = self.tasks.get(&p).map(|t| t.rec.status);
            match parent_status {
                Some(TaskStatus::InFlight) => {
                    self.tasks.get_mut(&p).expect("present").children.push(id);
                    self.tasks.get_mut(&id).expect("present").awaiting_parent = true;
                    return;
                }
                Some(TaskStatus::Missed) | None => {
                    self.miss(now, id, "parent_missed");
                    return;
                }
                Some(TaskStatus::Completed) => {}
            }
        }
        match task.origin {
            Origin::Node(n) => {
                if !self.node(n).alive() {
                    self.miss(now, id, "origin_failed");
                } else {
                    let hops = self.s.orchestrator.max_forward_hops;
                    self.accept(now, n, id, hops, false, None);
                }
            }
            Origin::Cohort(c) => {
                let c = c as usize;
                match self.serving_sat(c, now) {
                    None => self.miss(now, id, "no_coverage"),
                    Some(sat) => {
                        let up = task.input_bits / self.s.links.access_rate_bps + self.access_owlt(c, sat, now);
                        let bid = self.new_bundle(sat, vec![sat], task.input_bits, Cargo::Uplink(id));
                        self.queue.push(now + up, Priority::Traffic, Ev::BundleAt(bid));
                    }
                }
            }
        }
    }

    /// Input of `task` is at `at`.
    fn accept(
        &mut self,
        now: f64,
        at: NodeId,
        task: TaskId,
        hops_left: u32,
        placed: bool,
        exec: Option<TaskExecution>,
    ) {
        let s = self.s;
        let (class, demand) = {
            let t = &self.tasks[&task].task;
            (t.class, t.compute_demand_units)
        };
        let layer = self.node(at).layer;
        let job = Job {
            task,
            hops_left,
            placed,
            exec,
            stale_flagged: false,
        };
        if class == TaskClass::StorageRetrieval {
            if layer == Layer::Ground {
                self.complete_task(now, task);
            } else {
                let bits = self.tasks[&task].task.input_bits;
                let gws = self.gateways.clone();
                self.send(now, at, gws, bits, Cargo::Storage(task), None);
            }
            return;
        }
        if !self.in_orbit() {
            if layer == Layer::Ground || class == TaskClass::Housekeeping {
                self.node_mut(at).queue.push_back(job);
            } else {
                let bits = self.tasks[&task].task.input_bits;
                let gws = self.gateways.clone();
                self.send(
                    now,
                    at,
                    gws,
                    bits,
                    Cargo::Input {
                        task,
                        hops_left: 0,
                        placed: true,
                        exec: None,
                    },
                    None,
                );
            }
            return;
        }
        if class == TaskClass::BulkTraining && !placed {
            self.pending_global.push((task, at));
            return;
        }
        if placed || layer != Layer::Leo {
            self.node_mut(at).queue.push_back(job);
            return;
        }
        let view = self.local_view(at, now);
        let table = self.node(at).table.clone();
        match leo_local_decide(&view, class, demand, &s.zone_policy, table.as_ref(), &mut self.audit) {
            LocalAction::Execute => self.node_mut(at).queue.push_back(job),
            LocalAction::Forward { next_hop, .. } if hops_left > 0 => {
                self.forward(now, at, next_hop, task, hops_left - 1);
            }
            LocalAction::Forward { .. } => self.node_mut(at).queue.push_back(job),
            LocalAction::Queue { stale_table } => {
                let mut job = job;
                if stale_table {
                    self.c.stale_flags += 1;
                    job.stale_flagged = true;
                    self.log(
                        now,
                        "leo_local",
                        "stale_table",
                        Some(task),
                        Some(at),
                        None,
                        String::new(),
                    );
                }
                self.node_mut(at).queue.push_back(job);
            }
        }
    }

    fn forward(&mut self, now: f64, from: NodeId, to: NodeId, task: TaskId, hops_left: u32) {
        self.c.forwards += 1;
        let st = self.tasks.get_mut(&task).expect("present");
        st.rec.forwards += 1;
        let bits = st.task.input_bits;
        self.send(
            now,
            from,
            vec![to],
            bits,
            Cargo::Input {
                task,
                hops_left,
                placed: false,
                exec: None,
            },
            None,
        );
    }

    fn complete(&mut self, now: f64, cid: u64) {
        let Some((task, node)) = self.completing.remove(&cid) else {
            return;
        };
        if !self.node(node).alive() {
            self.drop_copy(now, task, "node_failure");
            return;
        }
        let Some(st) = self.tasks.get(&task) else { return };
        if st.rec.status != TaskStatus::InFlight || st.computed {
            return;
        }
        self.purge(task);
        let st = self.tasks.get_mut(&task).expect("present");
        st.computed = true;
        st.copies = 1;
        st.rec.execution_node = Some(node);
        let (class, out_bits, cohort, children) = (st.task.class, st.task.output_bits, st.cohort, st.children.clone());
        let layer = self.node(node).layer;
        if self.in_orbit() && layer != Layer::Ground && self.s.orchestrator.telemetry_bits > 0.0 {
            let gws = self.gateways.clone();
            self.send(
                now,
                node,
                gws,
                self.s.orchestrator.telemetry_bits,
                Cargo::Telemetry,
                None,
            );
        }
        match class {
            TaskClass::RealTimeInference if cohort.is_some() => {
                let c = cohort.expect("checked");
                match self.serving_sat(c, now) {
                    None => self.miss(now, task, "no_coverage"),
                    Some(sat) => self.send(now, node, vec![sat], out_bits, Cargo::Result(task), None),
                }
            }
            TaskClass::BulkTraining if layer != Layer::Ground && out_bits > 0.0 => {
                let gws = self.gateways.clone();
                self.send(now, node, gws, out_bits, Cargo::Result(task), None);
            }
            _ => self.complete_task(now, task),
        }
        for child in children {
            let Some(cs) = self.tasks.get_mut(&child) else { continue };
            if !cs.awaiting_parent {
                continue;
            }
            cs.awaiting_parent = false;
            self.accept(now, node, child, 0, true, None);
        }
    }

    fn complete_task(&mut self, t: f64, task: TaskId) {
        self.purge(task);
        let st = self.tasks.get_mut(&task).expect("present");
        st.copies = 0;
        st.rec.status = TaskStatus::Completed;
        st.rec.completion_s = Some(t);
        let lat = t - st.rec.arrival_s;
        st.rec.latency_s = Some(lat);
        st.rec.deadline_met = Some(st.task.deadline_s.is_none_or(|d| lat <= d));
    }

    fn miss(&mut self, t: f64, task: TaskId, reason: &str) {
        self.purge(task);
        let Some(st) = self.tasks.get_mut(&task) else { return };
        if st.rec.status != TaskStatus::InFlight {
            return;
        }
        st.copies = 0;
        st.awaiting_parent = false;
        st.rec.status = TaskStatus::Missed;
        st.rec.completion_s = Some(t);
        st.rec.deadline_met = Some(false);
        st.rec.miss_reason = Some(reason.into());
        let children = st.children.clone();
        for c in children {
            if self.tasks.get(&c).is_some_and(|c| c.awaiting_parent) {
                self.miss(t, c, "parent_missed");
            }
        }
    }

    fn drop_copy(&mut self, t: f64, task: TaskId, reason: &str) {
        let Some(st) = self.tasks.get_mut(&task) else { return };
        if st.rec.status != TaskStatus::InFlight {
            return;
        }
        st.copies = st.copies.saturating_sub(1);
        if st.copies == 0 {
            self.miss(t, task, reason);
        }
    }

    /// Removes every copy of `task` from queues, processors and links.
    fn purge(&mut self, task: TaskId) {
        for n in &mut self.nodes {
            n.queue.retain(|j| j.task != task);
            n.node.running.retain(|e| e.task_id != task);
        }
        let ids: Vec<u64> = self
            .bundles
            .iter()
            .filter(|(_, b)| b.cargo.task() == Some(task))
            .map(|(id, _)| *id)
            .collect();
        for id in ids {
            self.bundles.remove(&id);
            self.stored.remove(&id);
        }
        self.completing.retain(|_, (t, _)| *t != task);
        self.pending_global.retain(|(t, _)| *t != task);
    }

    fn fail_node(&mut self, now: f64, id: NodeId, cause: &str) {
        let n = self.node_mut(id);
        if n.layer == Layer::Ground {
            return;
        }
        let was_alive = !n.node.health.failed;
        n.node.health.failed = true;
        let running: Vec<TaskId> = n.node.running.drain(..).map(|e| e.task_id).collect();
        let queued: Vec<TaskId> = n.queue.drain(..).map(|j| j.task).collect();
        if was_alive || cause == "dose" {
            self.c.node_failures += 1;
            self.log(now, "engine", "node_failure", None, Some(id), None, cause.into());
        }
        for t in running.into_iter().chain(queued) {
            self.drop_copy(now, t, "node_failure");
        }
        let lost: Vec<u64> = self
            .bundles
            .iter()
            .filter(|(bid, b)| b.at == id && self.stored.contains(bid))
            .map(|(bid, _)| *bid)
            .collect();
        for bid in lost {
            self.lose(now, bid);
        }
        let pend: Vec<TaskId> = self
            .pending_global
            .iter()
            .filter(|(_, at)| *at == id)
            .map(|(t, _)| *t)
            .collect();
        self.pending_global.retain(|(_, at)| *at != id);
        for t in pend {
            self.drop_copy(now, t, "node_failure");
        }
    }

    // ---------------------------------------------------------------- bundles

    fn new_bundle(&mut self, at: NodeId, dests: Vec<NodeId>, bits: f64, cargo: Cargo) -> u64 {
        let id = self.next_bundle;
        self.next_bundle += 1;
        self.bundles.insert(
            id,
            Bundle {
                bits,
                cargo,
                at,
                dests,
                path: VecDeque::new(),
            },
        );
        id
    }

    fn send(&mut self, now: f64, from: NodeId, dests: Vec<NodeId>, bits: f64, cargo: Cargo, route: Option<&Route>) {
        if dests.is_empty() {
            match cargo.task() {
                Some(t) => self.drop_copy(now, t, "no_destination"),
                None => self.c.control_dropped += 1,
            }
            return;
        }
        let id = self.new_bundle(from, dests, bits, cargo);
        if let (Some(r), Some(g)) = (route, self.graph.as_ref()) {
            let path = r.hops.iter().map(|h| {
                let e = g.edge(h.edge);
                (e.dst, e.window_end_s)
            });
            self.bundles.get_mut(&id).expect("new").path = path.collect();
        }
        self.advance(now, id);
    }

    fn lose(&mut self, now: f64, id: u64) {
        self.stored.remove(&id);
        let Some(b) = self.bundles.remove(&id) else { return };
        match b.cargo.task() {
            Some(t) => self.drop_copy(now, t, "node_failure"),
            None => self.c.control_dropped += 1,
        }
    }

    fn bundle_at(&mut self, now: f64, id: u64) {
        let Some(b) = self.bundles.get(&id) else { return };
        if !self.node(b.at).alive() {
            self.lose(now, id);
            return;
        }
        self.advance(now, id);
    }

    fn plan_path(&self, now: f64, b: &Bundle) -> Option<VecDeque<(NodeId, f64)>> {
        let g = self.graph.as_ref()?;
        let dests: Vec<NodeId> = b.dests.iter().copied().filter(|d| self.node(*d).alive()).collect();
        if dests.is_empty() {
            return None;
        }
        let r = earliest_delivery_to_any(g, &Reservations::default(), b.at, &dests, now, b.bits).ok()?;
        Some(
            r.hops
                .iter()
                .map(|h| {
                    let e = g.edge(h.edge);
                    (e.dst, e.window_end_s)
                })
                .collect(),
        )
    }

    /// Earliest realized transmission of `bits` from `a` to `b` no earlier
    /// than `t`, starting before `limit`.
    fn realize(&self, a: NodeId, b: NodeId, t: f64, bits: f64, limit: f64) -> Option<(f64, Contact)> {
        let windows = self.realized.get(&(a, b))?;
        let t0 = t.max(self.link_free.get(&(a, b)).copied().unwrap_or(0.0));
        let first = windows.partition_point(|w| w.end_s <= t0);
        for w in &windows[first..] {
            if w.start_s > limit {
                break;
            }
            let d = t0.max(w.start_s);
            if d + bits / w.rate_bps <= w.end_s {
                return Some((d, *w));
            }
        }
        None
    }

    fn advance(&mut self, now: f64, id: u64) {
        let Some(b) = self.bundles.get(&id).cloned() else {
            return;
        };
        if b.dests.contains(&b.at) {
            self.bundles.remove(&id);
            self.deliver(now, b);
            return;
        }
        let mut path = b.path.clone();
        let mut hop = path
            .front()
            .and_then(|&(next, limit)| self.realize(b.at, next, now, b.bits, limit).map(|h| (next, h)));
        if hop.is_none() {
            path = self.plan_path(now, &b).unwrap_or_default();
            hop = path
                .front()
                .and_then(|&(next, limit)| self.realize(b.at, next, now, b.bits, limit).map(|h| (next, h)));
        }
        let Some((next, (depart, contact))) = hop else {
            self.stored.insert(id);
            return;
        };
        path.pop_front();
        let tx = b.bits / contact.rate_bps;
        let arrive = depart + tx + contact.owlt_s;
        self.link_free.insert((b.at, next), depart + tx);
        let traffic = b.cargo.traffic();
        match contact.kind {
            ContactKind::Feeder => match traffic {
                Traffic::Payload => self.c.feeder_payload_bits += b.bits,
                Traffic::Control => self.c.feeder_control_bits += b.bits,
            },
            ContactKind::Isl => self.c.isl_bits += b.bits,
            ContactKind::Access => {}
        }
        let from = self.node_mut(b.at);
        let e = from.node.spec.power.p_tx_w_per_bps * b.bits;
        if from.powered {
            from.tx_j += e;
            self.c.task_energy_j += e;
        }
        self.links.push(LinkRecord {
            depart_s: depart,
            arrive_s: arrive,
            src: b.at,
            dst: next,
            kind: contact.kind.as_str().into(),
            bits: b.bits,
            traffic,
            task: b.cargo.task(),
        });
        let bm = self.bundles.get_mut(&id).expect("present");
        bm.at = next;
        bm.path = path;
        self.queue.push(arrive, Priority::Traffic, Ev::BundleAt(id));
    }

    fn deliver(&mut self, now: f64, b: Bundle) {
        match b.cargo {
            Cargo::Input {
                task,
                hops_left,
                placed,
                exec,
            } => {
                if self
                    .tasks
                    .get(&task)
                    .is_some_and(|t| t.rec.status == TaskStatus::InFlight)
                {
                    self.accept(now, b.at, task, hops_left, placed, exec);
                }
            }
            Cargo::Uplink(task) => self.accept(now, b.at, task, self.s.orchestrator.max_forward_hops, false, None),
            Cargo::Storage(task) => self.complete_task(now, task),
            Cargo::Result(task) => {
                let cohort = self.tasks[&task].cohort;
                match cohort {
                    None => self.complete_task(now, task),
                    Some(c) => match self.serving_sat(c, now) {
                        Some(sat) if sat == b.at => {
                            let bits = self.tasks[&task].task.output_bits;
                            let down = bits / self.s.links.access_rate_bps + self.access_owlt(c, sat, now);
                            self.complete_task(now + down, task);
                        }
                        Some(sat) => self.send(now, b.at, vec![sat], b.bits, Cargo::Result(task), None),
                        None => self.miss(now, task, "no_coverage"),
                    },
                }
            }
            Cargo::Table(t) => {
                let n = self.node_mut(b.at);
                if n.table.as_ref().is_none_or(|old| old.valid_from_s <= t.valid_from_s) {
                    n.table = Some(*t);
                }
                self.c.tables_delivered += 1;
            }
            Cargo::Telemetry => {}
        }
    }

    // ----------------------------------------------------------- orchestration

    fn controller(&self, layer: Layer) -> Option<NodeId> {
        self.nodes
            .iter()
            .find(|n| n.layer == layer && n.alive())
            .map(|n| n.node.id())
    }

    fn forecasts(&self, now: f64, horizon: f64) -> ForecastSet {
        let s = self.s;
        let slot = s.orchestrator.slot_s;
        let slots = (horizon / slot).ceil() as usize;
        let mut out = Vec::new();
        for n in &self.nodes {
            let spec = &n.node.spec;
            let profile = NodeProfile {
                id: spec.node_id,
                layer: n.layer,
                p_tx_w_per_bps: spec.power.p_tx_w_per_bps,
                compute_j_per_unit: spec.power.p_compute_max_w / n.node.capacity().max(1e-9),
            };
            let usable = n.alive() && !n.degrading;
            let capacity = if usable { n.node.capacity() } else { 0.0 };
            let compute_here = n.layer != Layer::Ground || !self.in_orbit();
            let risk = hazard_rate(&n.node.health, &s.orchestrator.risk);
            let mut soc = n.pt.soc_wh;
            let cap = spec.power.battery_capacity_wh;
            let harvest = harvest_power(&spec.power, false, &self.env.constants);
            let load = n.pt.load_w.max(spec.power.p_idle_w);
            let mut samples = Vec::with_capacity(slots);
            for k in 0..slots {
                let a = now + k as f64 * slot;
                let zone = if n.powered {
                    compute_zone(
                        soc,
                        n.pt.thermal_headroom,
                        cap,
                        &s.zone_policy,
                        &ZoneForecast {
                            eclipse_remaining_s: n.eclipse_remaining(a),
                            time_to_next_contact_s: 0.0,
                            projected_load_w: load,
                        },
                    )
                } else {
                    EnergyZone::Green
                };
                samples.push(ForecastSample {
                    time_s: a,
                    zone,
                    available_capacity_units: if compute_here { capacity } else { 0.0 },
                    thermal_headroom: if n.powered { n.pt.thermal_headroom } else { 1.0 },
                    risk_rate_per_s: risk,
                    // degrading nodes still relay, they just stop computing
                    alive: n.alive(),
                });
                if n.powered {
                    let sun = n.sunlit(a, a + slot);
                    soc = (soc + (harvest * sun - load * slot) / 3600.0).clamp(0.0, cap);
                }
            }
            out.push(NodeForecast { profile, samples });
        }
        ForecastSet {
            start_s: now,
            end_s: now + slots as f64 * slot,
            nodes: out,
        }
    }

    fn geo_epoch(&mut self, now: f64) -> Result<(), SimError> {
        let s = self.s;
        let oc = &s.orchestrator;
        let horizon = oc.horizon_s();
        let fs = self.forecasts(now, horizon);
        let plan: Vec<Contact> = self
            .nominal
            .iter()
            .filter(|c| c.end_s > now && c.start_s < now + horizon)
            .copied()
            .collect();
        let g = build_time_expanded_graph(&plan, &fs, oc.slot_s, horizon, s.outage_model.outage_rate_per_s)?;
        self.graph = Some(g);
        let controller = self.controller(Layer::Geo).or_else(|| self.controller(Layer::Meo));
        if self.in_orbit() {
            if let Some(ctrl) = controller {
                self.global_plan(now, ctrl);
            }
        }
        let retry: Vec<u64> = std::mem::take(&mut self.stored).into_iter().collect();
        for id in retry {
            if let Some(b) = self.bundles.get_mut(&id) {
                b.path.clear();
                self.advance(now, id);
            }
        }
        self.last_epoch = now;
        self.check_locations()?;
        if now + oc.geo_epoch_s < self.horizon {
            self.queue.push(now + oc.geo_epoch_s, Priority::Control, Ev::GeoEpoch);
        }
        Ok(())
    }

    fn global_plan(&mut self, now: f64, ctrl: NodeId) {
        let s = self.s;
        let oc = &s.orchestrator;
        self.audit.record_graph_build(ControllerTier::GeoGlobal);
        // SLA over the last epoch
        let window: Vec<LatencyRecord> = self
            .tasks
            .values()
            .filter(|t| {
                t.rec.status != TaskStatus::InFlight
                    && t.rec
                        .completion_s
                        .is_some_and(|c| c > self.last_epoch - 1e-9 && c <= now)
            })
            .filter(|t| t.rec.latency_s.is_some() || t.rec.status == TaskStatus::Missed)
            .map(|t| LatencyRecord {
                class: t.task.class,
                latency_s: t.rec.latency_s.unwrap_or(f64::INFINITY),
                deadline_met: t.rec.deadline_met.unwrap_or(false),
            })
            .collect();
        let breach = if window.is_empty() {
            false
        } else {
            let report = sla_monitor(&window, &oc.sla);
            let b = report.breach;
            if b {
                self.c.sla_breaches += 1;
                let detail = report
                    .classes
                    .iter()
                    .filter(|(_, c)| c.breach)
                    .map(|(k, c)| format!("{k}:q={:.3}", c.quantile_latency_s))
                    .collect::<Vec<_>>()
                    .join(";");
                self.log(now, "geo_global", "sla_breach", None, Some(ctrl), None, detail);
            }
            self.sla_reports.push((now, report));
            b
        };
        self.weights = oc.sla.effective_weights(&s.cost_weights, breach);
        let g = self.graph.as_ref().expect("built");
        let mut red: BTreeSet<NodeId> = BTreeSet::new();
        for n in g.nodes() {
            if (0..g.slot_count()).any(|k| g.annotation(n, k).is_some_and(|a| a.predicted_zone == EnergyZone::Red)) {
                red.insert(n);
            }
        }
        let leo: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|n| n.layer == Layer::Leo && n.alive())
            .map(|n| n.node.id())
            .collect();
        let valid_until: BTreeMap<NodeId, f64> = leo
            .iter()
            .map(|id| {
                let w = self.feeder_windows.get(id).map(Vec::as_slice).unwrap_or(&[]);
                (
                    *id,
                    table_validity(w, now, oc.horizon_s(), self.horizon.max(now + oc.horizon_s())),
                )
            })
            .collect();
        let pending: Vec<PendingTask> = self
            .pending_global
            .iter()
            .filter_map(|(t, at)| {
                self.tasks.get(t).map(|st| PendingTask {
                    task: st.task.clone(),
                    location: *at,
                    release_s: now,
                })
            })
            .collect();
        let plan = geo_global_plan(
            GlobalPlanInput {
                graph: g,
                reservations: Reservations::default(),
                now_s: now,
                weights: self.weights,
                policy: s.zone_policy,
                roles: &self.roles,
                table_nodes: &leo,
                red_forecast: &red,
                valid_until: &valid_until,
                pending: &pending,
                probe_bits: oc.control_bundle_bits.max(1.0),
                snapshot_age_s: 0.0,
                epoch_s: oc.geo_epoch_s,
            },
            &mut self.audit,
        );
        if plan.degraded_view {
            self.c.degraded_views += 1;
        }
        let mut res = plan.reservations.clone();
        let mut dispatch = Vec::new();
        for (tid, result) in &plan.placements {
            let Some(p) = pending.iter().find(|p| p.task.id == *tid) else {
                continue;
            };
            match result {
                Ok(d) => {
                    let candidates: Vec<NodeId> = self
                        .nodes
                        .iter()
                        .filter(|n| n.layer.is_orbital() && n.alive() && !n.degrading)
                        .map(|n| n.node.id())
                        .collect();
                    let gws = self.gateways.clone();
                    let q = PlacementQuery {
                        task: &p.task,
                        source: p.location,
                        release_s: now,
                        candidates: &candidates,
                        return_to: &gws,
                    };
                    let rep = replicate_decision(
                        g,
                        &res,
                        &self.weights,
                        &s.zone_policy,
                        &q,
                        d.clone(),
                        oc.replication_risk_threshold,
                    );
                    for extra in rep.placements.iter().skip(1) {
                        res.commit(extra);
                    }
                    dispatch.push((*tid, p.location, rep.placements));
                }
                Err(e) => {
                    if p.task.absolute_deadline().is_some_and(|dl| dl <= now) {
                        dispatch.push((*tid, p.location, Vec::new()));
                    } else {
                        self.orch.push(OrchestrationRecord {
                            time_s: now,
                            tier: "geo_global".into(),
                            action: "place_deferred".into(),
                            task: Some(*tid),
                            from: Some(p.location),
                            to: None,
                            detail: e.to_string(),
                        });
                    }
                }
            }
        }
        let routes: Vec<Dispatch> = dispatch
            .into_iter()
            .map(|(tid, at, ps)| {
                let r = ps
                    .into_iter()
                    .map(|d| {
                        let detail = format!(
                            "cost={:.6};risk={:.6};eta={:.3}",
                            d.total_cost, d.risk, d.estimated_completion_s
                        );
                        let route = Route {
                            delivery_s: d.forward.last().map_or(now, |h| h.arrive_s),
                            hops: d.forward,
                        };
                        (d.execution_node, route, detail)
                    })
                    .collect();
                (tid, at, r)
            })
            .collect();
        let tables = plan.tables;
        for (tid, at, placements) in routes {
            self.pending_global.retain(|(t, _)| *t != tid);
            if placements.is_empty() {
                self.miss(now, tid, "deadline_expired");
                continue;
            }
            let n = placements.len() as u32;
            let bits = self.tasks[&tid].task.input_bits;
            {
                let st = self.tasks.get_mut(&tid).expect("present");
                st.copies = n;
                st.rec.replicas = n;
            }
            self.c.replicas += u64::from(n - 1);
            for (node, route, detail) in placements {
                self.log(now, "geo_global", "place", Some(tid), Some(at), Some(node), detail);
                self.send(
                    now,
                    at,
                    vec![node],
                    bits,
                    Cargo::Input {
                        task: tid,
                        hops_left: 0,
                        placed: true,
                        exec: None,
                    },
                    Some(&route),
                );
            }
        }
        for (node, table) in tables {
            let detail = table
                .entries
                .iter()
                .map(|(c, e)| {
                    format!(
                        "{c}={}/{}",
                        e.next_hop.map_or("-".into(), |n| n.to_string()),
                        e.fallback.map_or("-".into(), |n| n.to_string())
                    )
                })
                .collect::<Vec<_>>()
                .join(";");
            self.log(now, "geo_global", "table", None, Some(ctrl), Some(node), detail);
            if now == 0.0 {
                self.node_mut(node).table = Some(table);
                self.c.tables_delivered += 1;
            } else {
                self.send(
                    now,
                    ctrl,
                    vec![node],
                    oc.control_bundle_bits,
                    Cargo::Table(Box::new(table)),
                    None,
                );
            }
        }
        if oc.geo_report_bits > 0.0 {
            let gws = self.gateways.clone();
            self.send(now, ctrl, gws, oc.geo_report_bits, Cargo::Telemetry, None);
        }
    }

    fn meo_epoch(&mut self, now: f64) {
        let oc = &self.s.orchestrator;
        if self.in_orbit() {
            let meos: Vec<NodeId> = self
                .nodes
                .iter()
                .filter(|n| n.layer == Layer::Meo && n.alive())
                .map(|n| n.node.id())
                .collect();
            for m in meos {
                self.rebalance(now, m);
            }
            if self
                .controller(Layer::Geo)
                .or_else(|| self.controller(Layer::Meo))
                .is_some()
            {
                self.watchdog(now);
            }
        }
        if now + oc.meo_epoch_s < self.horizon {
            self.queue.push(now + oc.meo_epoch_s, Priority::Control, Ev::MeoEpoch);
        }
    }

    fn linked_now(&self, a: NodeId, b: NodeId, t: f64) -> bool {
        self.realized
            .get(&(a, b))
            .is_some_and(|w| w.iter().any(|c| c.start_s <= t && t < c.end_s))
    }

    fn rebalance(&mut self, now: f64, meo: NodeId) {
        let s = self.s;
        let footprint: BTreeSet<NodeId> = self
            .nodes
            .iter()
            .filter(|n| n.layer == Layer::Leo && n.alive() && self.linked_now(n.node.id(), meo, now))
            .map(|n| n.node.id())
            .collect();
        if footprint.len() < 2 {
            return;
        }
        let snaps: Vec<QueueSnapshot> = footprint
            .iter()
            .map(|&id| {
                let n = self.node(id);
                QueueSnapshot {
                    node_id: id,
                    alive: n.alive(),
                    zone: n.pt.zone,
                    lightweight_limit: n.lightweight_limit(s),
                    queued: n
                        .queue
                        .iter()
                        .filter_map(|j| {
                            self.tasks.get(&j.task).map(|st| QueuedTask {
                                task_id: j.task,
                                class: st.task.class,
                                arrival_s: st.rec.arrival_s,
                                demand_units: st.task.compute_demand_units,
                            })
                        })
                        .collect(),
                }
            })
            .collect();
        let Some(g) = self.graph.as_ref() else { return };
        let tasks = &self.tasks;
        let out = meo_regional_rebalance(
            meo,
            &footprint,
            &snaps,
            s.orchestrator.load_balance_threshold,
            |t, from, to| {
                let bits = tasks.get(&t.task_id).map_or(0.0, |st| st.task.input_bits);
                earliest_delivery_route(g, &Reservations::default(), from, to, now, bits).ok()
            },
            &mut self.audit,
        );
        for node in out.sla_risk {
            self.c.sla_risk += 1;
            self.log(
                now,
                "meo_regional",
                "sla_risk",
                None,
                Some(meo),
                Some(node),
                String::new(),
            );
        }
        for m in out.migrations {
            let pos = self.node(m.from_node).queue.iter().position(|j| j.task == m.task_id);
            let Some(pos) = pos else { continue };
            let job = self.node_mut(m.from_node).queue.remove(pos).expect("position valid");
            self.c.migrations += 1;
            let st = self.tasks.get_mut(&m.task_id).expect("present");
            st.rec.migrations += 1;
            let bits = st.task.input_bits;
            self.log(
                now,
                "meo_regional",
                m.trigger.as_str(),
                Some(m.task_id),
                Some(m.from_node),
                Some(m.to_node),
                String::new(),
            );
            self.send(
                now,
                m.from_node,
                vec![m.to_node],
                bits,
                Cargo::Input {
                    task: m.task_id,
                    hops_left: 0,
                    placed: true,
                    exec: job.exec,
                },
                m.transfer_route.as_ref(),
            );
        }
    }

    /// Where a task leaving `from` should go: the cheapest placement over
    /// healthy nodes whose zone admits it, else the nearest such node.
    fn relocation_target(
        &self,
        now: f64,
        from: NodeId,
        task: TaskId,
        excluded: &BTreeSet<NodeId>,
    ) -> Option<(NodeId, Option<Route>)> {
        let s = self.s;
        let g = self.graph.as_ref()?;
        let st = self.tasks.get(&task)?;
        let cands: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|n| n.powered && n.alive() && !n.degrading && n.layer != Layer::Lunar)
            .filter(|n| n.node.id() != from && !excluded.contains(&n.node.id()))
            .filter(|n| {
                zone_permits(
                    n.pt.zone,
                    st.task.class,
                    st.task.compute_demand_units,
                    n.lightweight_limit(s),
                )
            })
            .map(|n| n.node.id())
            .collect();
        if cands.is_empty() {
            return None;
        }
        let q = PlacementQuery {
            task: &st.task,
            source: from,
            release_s: now,
            candidates: &cands,
            return_to: &[],
        };
        if let Ok(d) = place_task(g, &Reservations::default(), &self.weights, &s.zone_policy, &q) {
            let route = Route {
                delivery_s: d.forward.last().map_or(now, |h| h.arrive_s),
                hops: d.forward,
            };
            return Some((d.execution_node, Some(route)));
        }
        let r = earliest_delivery_to_any(g, &Reservations::default(), from, &cands, now, st.task.input_bits).ok()?;
        let to = r.hops.last().map(|h| g.edge(h.edge).dst)?;
        Some((to, Some(r)))
    }

    fn watchdog(&mut self, now: f64) {
        let oc = &self.s.orchestrator;
        self.audit.record(ControllerTier::GeoGlobal, AccessScope::Global);
        let snaps: Vec<HealthSnapshot> = self
            .nodes
            .iter()
            .filter(|n| n.powered && n.alive())
            .map(|n| HealthSnapshot {
                node_id: n.node.id(),
                alive: true,
                dose_fraction: n.node.health.dose_fraction(),
                hazard_rate_per_s: hazard_rate(&n.node.health, &oc.risk),
                running: n
                    .node
                    .running
                    .iter()
                    .map(|e| RunningTask {
                        task_id: e.task_id,
                        class: e.class,
                        progress: e.progress,
                    })
                    .collect(),
            })
            .collect();
        if self.graph.is_none() {
            return;
        }
        let flagged: BTreeSet<NodeId> = snaps
            .iter()
            .filter(|h| h.degrading(&oc.watchdog, oc.geo_epoch_s))
            .map(|h| h.node_id)
            .collect();
        let out = degradation_watchdog(&snaps, &oc.watchdog, oc.geo_epoch_s, |from, rt| {
            self.relocation_target(now, from, rt.task_id, &flagged)
        });
        for id in &out.degrading {
            let n = self.node_mut(*id);
            if !n.degrading {
                n.degrading = true;
                self.log(
                    now,
                    "geo_global",
                    "degradation_forecast",
                    None,
                    Some(*id),
                    None,
                    String::new(),
                );
            }
        }
        for t in &out.unprotected {
            self.c.unprotected += 1;
            self.log(
                now,
                "geo_global",
                "unprotected_task",
                Some(*t),
                None,
                None,
                String::new(),
            );
        }
        for m in out.migrations {
            let n = self.node_mut(m.from_node);
            let Some(pos) = n.node.running.iter().position(|e| e.task_id == m.task_id) else {
                continue;
            };
            let mut exec = n.node.running.remove(pos);
            exec.checkpoint();
            let detail = format!("checkpoint={:.6}", exec.checkpoint_progress);
            self.relocate(
                now,
                m.from_node,
                m.to_node,
                m.task_id,
                Some(exec),
                m.trigger.as_str(),
                detail,
                m.transfer_route,
            );
        }
        // queued work on a degrading node would never start there
        for id in out.degrading {
            let queued: Vec<Job> = self.node_mut(id).queue.drain(..).collect();
            for job in queued {
                match self.relocation_target(now, id, job.task, &flagged) {
                    Some((to, route)) => self.relocate(
                        now,
                        id,
                        to,
                        job.task,
                        job.exec,
                        "degradation_forecast",
                        String::new(),
                        route,
                    ),
                    None => self.node_mut(id).queue.push_back(job),
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn relocate(
        &mut self,
        now: f64,
        from: NodeId,
        to: NodeId,
        task: TaskId,
        exec: Option<TaskExecution>,
        action: &str,
        detail: String,
        route: Option<Route>,
    ) {
        self.c.migrations += 1;
        let st = self.tasks.get_mut(&task).expect("present");
        st.rec.migrations += 1;
        let bits = st.task.input_bits;
        self.log(now, "geo_global", action, Some(task), Some(from), Some(to), detail);
        self.send(
            now,
            from,
            vec![to],
            bits,
            Cargo::Input {
                task,
                hops_left: 0,
                placed: true,
                exec,
            },
            route.as_ref(),
        );
    }

    // ------------------------------------------------------------- invariants

    fn check_locations(&self) -> Result<(), SimError> {
        let mut count: BTreeMap<TaskId, u32> = BTreeMap::new();
        let mut add = |t: TaskId| *count.entry(t).or_default() += 1;
        for n in &self.nodes {
            n.queue.iter().for_each(|j| add(j.task));
            n.node.running.iter().for_each(|e| add(e.task_id));
        }
        for b in self.bundles.values() {
            if let Some(t) = b.cargo.task() {
                add(t);
            }
        }
        self.completing.values().for_each(|(t, _)| add(*t));
        self.pending_global.iter().for_each(|(t, _)| add(*t));
        for (id, st) in &self.tasks {
            let c = count.get(id).copied().unwrap_or(0) + u32::from(st.awaiting_parent);
            match st.rec.status {
                TaskStatus::InFlight => {
                    if c == 0 {
                        return Err(SimError::LostTask(*id));
                    }
                    if c != st.copies || c > st.task.replication_k.max(1) {
                        return Err(invariant(
                            "task_location",
                            format!("task {} held at {c} places, {} copies expected", id.0, st.copies),
                        ));
                    }
                }
                _ => {
                    if c != 0 {
                        return Err(invariant("task_location", format!("finished task {} still held", id.0)));
                    }
                }
            }
        }
        Ok(())
    }

    fn finish(self) -> MetricsLedger {
        let s = self.s;
        let tasks: BTreeMap<TaskId, TaskRecord> = self.tasks.iter().map(|(k, v)| (*k, v.rec.clone())).collect();
        let count = |st: TaskStatus| tasks.values().filter(|r| r.status == st).count() as u64;
        let (completed, missed, in_flight) = (
            count(TaskStatus::Completed),
            count(TaskStatus::Missed),
            count(TaskStatus::InFlight),
        );
        let generated = tasks.len() as u64;
        let lat: Vec<f64> = tasks.values().filter_map(|r| r.latency_s).collect();
        let late = tasks
            .values()
            .filter(|r| r.status == TaskStatus::Missed || r.deadline_met == Some(false))
            .count() as u64;
        let mut by_class = BTreeMap::new();
        for class in TaskClass::ALL {
            if let Some(q) = latency_quantile(tasks.values().filter(|r| r.class == class), 0.95) {
                by_class.insert(class.as_str().to_string(), q);
            }
        }
        let mut max_err: f64 = 0.0;
        for n in self.nodes.iter().filter(|n| n.powered) {
            let cap = n.node.spec.power.battery_capacity_wh;
            let err = (n.pt.soc_wh - n.soc0 - n.net_wh - n.clamp_wh).abs() / cap;
            max_err = max_err.max(err);
        }
        let (nominal_isl, realized_isl) = {
            let clip = |c: &Contact| (c.end_s.min(self.horizon) - c.start_s.max(0.0)).max(0.0);
            let nom: f64 = self
                .nominal
                .iter()
                .filter(|c| c.kind == ContactKind::Isl)
                .map(clip)
                .sum();
            let real: f64 = self
                .realized
                .values()
                .flatten()
                .filter(|c| c.kind == ContactKind::Isl)
                .map(clip)
                .sum();
            (nom, real)
        };
        let ratio = |a: f64, b: u64| if b == 0 { 0.0 } else { a / b as f64 };
        let metrics = Aggregates {
            tasks_generated: generated,
            completed,
            missed,
            in_flight,
            completion_rate: ratio(completed as f64, generated),
            deadline_miss_rate: ratio(late as f64, generated),
            mean_latency_s: if lat.is_empty() {
                0.0
            } else {
                lat.iter().sum::<f64>() / lat.len() as f64
            },
            p95_latency_s: crate::orchestrator::quantile(&lat, 0.95).unwrap_or(0.0),
            p95_latency_by_class_s: by_class,
            feeder_payload_bits: self.c.feeder_payload_bits,
            feeder_control_bits: self.c.feeder_control_bits,
            feeder_bits_total: self.c.feeder_payload_bits + self.c.feeder_control_bits,
            isl_bits: self.c.isl_bits,
            energy_j: self.c.task_energy_j,
            energy_per_completed_task_j: ratio(self.c.task_energy_j, completed),
            migrations: self.c.migrations,
            replicas_launched: self.c.replicas,
            forwards: self.c.forwards,
            handovers: self.c.handovers,
            red_zone_violations: self.c.red_violations,
            red_zone_node_s: self.nodes.iter().map(|n| n.red_s).sum(),
            stale_table_flags: self.c.stale_flags,
            unprotected_tasks: self.c.unprotected,
            sla_breaches: self.c.sla_breaches,
            sla_risk_flags: self.c.sla_risk,
            degraded_views: self.c.degraded_views,
            access_violations: self.audit.violations(),
            tables_delivered: self.c.tables_delivered,
            control_bundles_dropped: self.c.control_dropped,
            node_failures: self.c.node_failures,
            max_energy_error_fraction: max_err,
            isl_nominal_s: nominal_isl,
            isl_available_s: realized_isl,
            isl_availability: if nominal_isl > 0.0 {
                realized_isl / nominal_isl
            } else {
                1.0
            },
            simulated_s: self.horizon,
            physics_steps: self.c.physics_steps,
        };
        let digest = super::plan_digest(&self.nominal);
        MetricsLedger {
            tasks,
            energy: self.energy,
            links: self.links,
            orchestration: self.orch,
            sla_reports: self.sla_reports,
            summary: Summary {
                scenario_name: s.name.clone(),
                scenario_hash: String::new(),
                seed: self.seed,
                rng_algorithm: RNG_ALGORITHM.into(),
                mode: s.mode.as_str().into(),
                contact_plan_digest: digest,
                config: s.resolved(),
                metrics,
            },
        }
    }
}
