//! Three-tier control: LEO-local table decisions, MEO regional load
//! balancing, GEO global planning, degradation watchdog and SLA monitor.
//!
//! Controllers are pure functions over the snapshots they are handed and
//! return plans; the engine applies them. Every call records what it read
//! in an [`AccessAudit`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::contact_graph::TimeExpandedGraph;
use crate::error::{ConfigError, RoutingError};
use crate::node_model::NodeId;
use crate::orbits::Layer;
use crate::power_thermal::{zone_permits, EnergyZone, ZonePolicy};
use crate::routing::{
    earliest_delivery_to_any, place_task, CostWeights, PlacementDecision, PlacementQuery, Reservations, Route,
};
use crate::traffic::{Task, TaskClass, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerTier {
    LeoLocal,
    MeoRegional,
    GeoGlobal,
}

impl ControllerTier {
    pub fn for_layer(layer: Layer) -> Option<Self> {
        match layer {
            Layer::Leo => Some(ControllerTier::LeoLocal),
            Layer::Meo => Some(ControllerTier::MeoRegional),
            Layer::Geo => Some(ControllerTier::GeoGlobal),
            Layer::Lunar | Layer::Ground => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerTier::LeoLocal => "leo_local",
            ControllerTier::MeoRegional => "meo_regional",
            ControllerTier::GeoGlobal => "geo_global",
        }
    }
}

impl std::fmt::Display for ControllerTier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessScope {
    /// The deciding node's own state and table.
    Local,
    /// Snapshots of nodes inside the controller's footprint.
    Footprint,
    /// Constellation-wide state.
    Global,
}

/// Counts of state reads per tier, used to check tier containment.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AccessAudit {
    reads: BTreeMap<(ControllerTier, AccessScope), u64>,
    graph_builds: BTreeMap<ControllerTier, u64>,
}

impl AccessAudit {
    pub fn record(&mut self, tier: ControllerTier, scope: AccessScope) {
        *self.reads.entry((tier, scope)).or_default() += 1;
    }

    pub fn record_graph_build(&mut self, tier: ControllerTier) {
        *self.graph_builds.entry(tier).or_default() += 1;
    }

    pub fn reads(&self, tier: ControllerTier, scope: AccessScope) -> u64 {
        self.reads.get(&(tier, scope)).copied().unwrap_or(0)
    }

    pub fn graph_builds(&self, tier: ControllerTier) -> u64 {
        self.graph_builds.get(&tier).copied().unwrap_or(0)
    }

    /// Reads or graph builds outside each tier's allowance.
    pub fn violations(&self) -> u64 {
        let mut v = self.reads(ControllerTier::LeoLocal, AccessScope::Footprint)
            + self.reads(ControllerTier::LeoLocal, AccessScope::Global)
            + self.reads(ControllerTier::MeoRegional, AccessScope::Global);
        v += self.graph_builds(ControllerTier::LeoLocal) + self.graph_builds(ControllerTier::MeoRegional);
        v
    }
}

/// Where a class is sent when its holder cannot run it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DestinationRole {
    /// Another node of the holder's layer.
    Peer,
    Regional,
    Global,
    Ground,
}

pub fn class_role(class: TaskClass) -> DestinationRole {
    match class {
        TaskClass::RealTimeInference | TaskClass::InterruptibleCompression | TaskClass::Housekeeping => {
            DestinationRole::Peer
        }
        TaskClass::BulkTraining => DestinationRole::Global,
        TaskClass::StorageRetrieval => DestinationRole::Ground,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub role: DestinationRole,
    pub next_hop: Option<NodeId>,
    pub fallback: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecomputedTable {
    pub node_id: NodeId,
    pub valid_from_s: f64,
    pub valid_until_s: f64,
    pub entries: BTreeMap<TaskClass, TableEntry>,
}

impl PrecomputedTable {
    pub fn is_valid(&self, t: f64) -> bool {
        t >= self.valid_from_s && t <= self.valid_until_s
    }

    pub fn lookup(&self, class: TaskClass) -> Option<&TableEntry> {
        self.entries.get(&class)
    }
}

/// What a LEO node knows about itself when deciding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalView {
    pub node_id: NodeId,
    pub now_s: f64,
    pub zone: EnergyZone,
    pub thermal_headroom: f64,
    /// Alive, not flagged as degrading, and below its concurrency limit.
    pub capacity_free: bool,
    /// Lightweight inference bound in compute units.
    pub lightweight_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LocalAction {
    Execute,
    Forward { next_hop: NodeId, fallback: Option<NodeId> },
    Queue { stale_table: bool },
}

pub fn leo_local_decide(
    view: &LocalView,
    class: TaskClass,
    demand_units: f64,
    policy: &ZonePolicy,
    table: Option<&PrecomputedTable>,
    audit: &mut AccessAudit,
) -> LocalAction {
    audit.record(ControllerTier::LeoLocal, AccessScope::Local);
    if view.zone == EnergyZone::Red && class != TaskClass::Housekeeping {
        return LocalAction::Queue { stale_table: false };
    }
    let thermal_ok = view.thermal_headroom >= policy.thermal_gate || class == TaskClass::Housekeeping;
    if view.capacity_free && thermal_ok && zone_permits(view.zone, class, demand_units, view.lightweight_limit) {
        return LocalAction::Execute;
    }
    let Some(table) = table.filter(|t| t.is_valid(view.now_s)) else {
        return LocalAction::Queue { stale_table: true };
    };
    match table.lookup(class) {
        Some(TableEntry {
            next_hop: Some(next_hop),
            fallback,
            ..
        }) => LocalAction::Forward {
            next_hop: *next_hop,
            fallback: *fallback,
        },
        _ => LocalAction::Queue { stale_table: false },
    }
}

/// Node sets each destination role resolves to.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoleMap {
    pub layers: BTreeMap<NodeId, Layer>,
    pub gateways: Vec<NodeId>,
}

impl RoleMap {
    fn of_layer(&self, layer: Layer) -> Vec<NodeId> {
        self.layers
            .iter()
            .filter(|(_, l)| **l == layer)
            .map(|(id, _)| *id)
            .collect()
    }

    /// Targets for `role` seen from `holder`, falling back up the
    /// hierarchy when a layer is absent.
    pub fn targets(&self, role: DestinationRole, holder: NodeId) -> Vec<NodeId> {
        let own = self.layers.get(&holder).copied();
        let chain: &[Layer] = match role {
            DestinationRole::Peer => {
                let peers: Vec<NodeId> = own
                    .map(|l| self.of_layer(l).into_iter().filter(|&n| n != holder).collect())
                    .unwrap_or_default();
                return peers;
            }
            DestinationRole::Regional => &[Layer::Meo, Layer::Geo],
            DestinationRole::Global => &[Layer::Geo, Layer::Meo],
            DestinationRole::Ground => return self.gateways.clone(),
        };
        for &l in chain {
            let v: Vec<NodeId> = self.of_layer(l).into_iter().filter(|&n| n != holder).collect();
            if !v.is_empty() {
                return v;
            }
        }
        self.gateways.clone()
    }
}

/// Next hops for each role, ranked by delivery time from `node` to the
/// nearest target through each direct neighbour.
fn rank_next_hops(
    g: &TimeExpandedGraph,
    node: NodeId,
    targets: &[NodeId],
    avoid: &BTreeSet<NodeId>,
    now: f64,
    probe_bits: f64,
) -> Vec<NodeId> {
    let res = Reservations::default();
    let mut firsts: BTreeMap<NodeId, f64> = BTreeMap::new();
    for &id in g.outgoing(node) {
        let e = g.edge(id);
        if e.window_end_s <= now || avoid.contains(&e.dst) {
            continue;
        }
        let arrive = now.max(e.window_start_s) + e.owlt_s;
        let slot = firsts.entry(e.dst).or_insert(f64::INFINITY);
        *slot = slot.min(arrive);
    }
    let target_set: BTreeSet<NodeId> = targets.iter().copied().collect();
    let mut scored: Vec<(f64, NodeId)> = Vec::new();
    for (&m, &arrive) in &firsts {
        let delivery = if target_set.contains(&m) {
            Some(arrive)
        } else if !g.can_relay(m, arrive) {
            None
        } else {
            earliest_delivery_to_any(g, &res, m, targets, arrive, probe_bits)
                .ok()
                .map(|r| r.delivery_s)
        };
        if let Some(d) = delivery {
            scored.push((d, m));
        }
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, m)| m).collect()
}

/// Per-class next-hop tables for every node in `nodes`. Nodes in
/// `red_forecast` are never next hops or targets for compute classes.
pub fn build_tables(
    g: &TimeExpandedGraph,
    nodes: &[NodeId],
    roles: &RoleMap,
    red_forecast: &BTreeSet<NodeId>,
    now: f64,
    valid_until: &BTreeMap<NodeId, f64>,
    probe_bits: f64,
) -> BTreeMap<NodeId, PrecomputedTable> {
    let mut out = BTreeMap::new();
    let none = BTreeSet::new();
    for &node in nodes {
        let mut by_role: BTreeMap<(DestinationRole, bool), (Option<NodeId>, Option<NodeId>)> = BTreeMap::new();
        let mut entries = BTreeMap::new();
        for class in TaskClass::ALL {
            let role = class_role(class);
            let compute = class != TaskClass::StorageRetrieval;
            let hops = by_role.entry((role, compute)).or_insert_with(|| {
                let avoid = if compute { red_forecast } else { &none };
                let targets: Vec<NodeId> = roles
                    .targets(role, node)
                    .into_iter()
                    .filter(|t| !avoid.contains(t))
                    .collect();
                let ranked = rank_next_hops(g, node, &targets, avoid, now, probe_bits);
                (ranked.first().copied(), ranked.get(1).copied())
            });
            entries.insert(
                class,
                TableEntry {
                    role,
                    next_hop: hops.0,
                    fallback: hops.1,
                },
            );
        }
        out.insert(
            node,
            PrecomputedTable {
                node_id: node,
                valid_from_s: now,
                valid_until_s: valid_until.get(&node).copied().unwrap_or(g.end_s()),
                entries,
            },
        );
    }
    out
}

/// Table validity: at least `horizon_s`, extended to cover the node's next
/// gap in ground contact. `ground_contacts` are the node's feeder windows.
pub fn table_validity(ground_contacts: &[(f64, f64)], now: f64, horizon_s: f64, plan_end_s: f64) -> f64 {
    let mut windows: Vec<(f64, f64)> = ground_contacts.iter().copied().filter(|w| w.1 > now).collect();
    windows.sort_by(|a, b| a.0.total_cmp(&b.0));
    // earliest time >= now without contact
    let mut gap_start = now;
    for w in &windows {
        if w.0 <= gap_start && w.1 > gap_start {
            gap_start = w.1;
        }
    }
    let gap_end = windows
        .iter()
        .map(|w| w.0)
        .filter(|&s| s > gap_start)
        .fold(plan_end_s, f64::min);
    (now + horizon_s).max(gap_end)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MigrationTrigger {
    DegradationForecast,
    RedZone,
    NodeFailure,
    SlaRisk,
    LoadBalance,
}

impl MigrationTrigger {
    pub fn as_str(self) -> &'static str {
        match self {
            MigrationTrigger::DegradationForecast => "degradation_forecast",
            MigrationTrigger::RedZone => "red_zone",
            MigrationTrigger::NodeFailure => "node_failure",
            MigrationTrigger::SlaRisk => "sla_risk",
            MigrationTrigger::LoadBalance => "load_balance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MigrationPlan {
    pub task_id: TaskId,
    pub from_node: NodeId,
    pub to_node: NodeId,
    pub checkpoint_progress: f64,
    pub transfer_route: Option<Route>,
    pub trigger: MigrationTrigger,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QueuedTask {
    pub task_id: TaskId,
    pub class: TaskClass,
    pub arrival_s: f64,
    pub demand_units: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueSnapshot {
    pub node_id: NodeId,
    pub alive: bool,
    pub zone: EnergyZone,
    pub lightweight_limit: f64,
    pub queued: Vec<QueuedTask>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RebalanceOutcome {
    pub migrations: Vec<MigrationPlan>,
    /// Overloaded nodes holding nothing that may move.
    pub sla_risk: Vec<NodeId>,
}

/// Moves the newest interruptible queued tasks from the most to the least
/// loaded node until the max/min queue ratio is within `threshold`.
/// `route` yields a transfer route between two nodes or `None` when they
/// are not connected.
pub fn meo_regional_rebalance(
    controller: NodeId,
    footprint: &BTreeSet<NodeId>,
    snapshots: &[QueueSnapshot],
    threshold: f64,
    mut route: impl FnMut(&QueuedTask, NodeId, NodeId) -> Option<Route>,
    audit: &mut AccessAudit,
) -> RebalanceOutcome {
    let scope = if snapshots.iter().all(|s| footprint.contains(&s.node_id)) {
        AccessScope::Footprint
    } else {
        AccessScope::Global
    };
    audit.record(ControllerTier::MeoRegional, scope);
    let _ = controller;
    let mut out = RebalanceOutcome::default();
    let mut queues: BTreeMap<NodeId, Vec<QueuedTask>> = BTreeMap::new();
    let mut info: BTreeMap<NodeId, &QueueSnapshot> = BTreeMap::new();
    for s in snapshots.iter().filter(|s| s.alive) {
        let mut q = s.queued.clone();
        // newest first
        q.sort_by(|a, b| b.arrival_s.total_cmp(&a.arrival_s).then(b.task_id.cmp(&a.task_id)));
        queues.insert(s.node_id, q);
        info.insert(s.node_id, s);
    }
    if queues.len() < 2 {
        return out;
    }
    loop {
        let mut order: Vec<(usize, NodeId)> = queues.iter().map(|(id, q)| (q.len(), *id)).collect();
        order.sort();
        let (max_len, most) = *order.last().expect("two or more nodes");
        let min_len = order[0].0;
        if max_len as f64 / (min_len.max(1) as f64) <= threshold {
            break;
        }
        let movable: Vec<QueuedTask> = queues[&most]
            .iter()
            .copied()
            .filter(|t| t.class.flags().interruptible)
            .collect();
        if movable.is_empty() {
            out.sla_risk.push(most);
            break;
        }
        let mut moved = None;
        'search: for task in &movable {
            for &(len, target) in &order {
                if target == most || len + 1 >= max_len {
                    continue;
                }
                let s = info[&target];
                if !zone_permits(s.zone, task.class, task.demand_units, s.lightweight_limit) {
                    continue;
                }
                if let Some(r) = route(task, most, target) {
                    moved = Some((*task, target, r));
                    break 'search;
                }
            }
        }
        let Some((task, target, r)) = moved else { break };
        queues
            .get_mut(&most)
            .expect("present")
            .retain(|t| t.task_id != task.task_id);
        queues.get_mut(&target).expect("present").push(task);
        out.migrations.push(MigrationPlan {
            task_id: task.task_id,
            from_node: most,
            to_node: target,
            checkpoint_progress: 0.0,
            transfer_route: Some(r),
            trigger: if info[&most].zone == EnergyZone::Red {
                MigrationTrigger::RedZone
            } else {
                MigrationTrigger::LoadBalance
            },
        });
    }
    out
}

/// A task waiting for a global placement.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingTask {
    pub task: Task,
    pub location: NodeId,
    pub release_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPlan {
    pub tables: BTreeMap<NodeId, PrecomputedTable>,
    pub placements: Vec<(TaskId, Result<PlacementDecision, RoutingError>)>,
    /// Capacity left after the placements.
    pub reservations: Reservations,
    pub degraded_view: bool,
}

pub struct GlobalPlanInput<'a> {
    pub graph: &'a TimeExpandedGraph,
    pub reservations: Reservations,
    pub now_s: f64,
    pub weights: CostWeights,
    pub policy: ZonePolicy,
    pub roles: &'a RoleMap,
    pub table_nodes: &'a [NodeId],
    pub red_forecast: &'a BTreeSet<NodeId>,
    pub valid_until: &'a BTreeMap<NodeId, f64>,
    pub pending: &'a [PendingTask],
    pub probe_bits: f64,
    /// Age of the oldest snapshot the view was built from.
    pub snapshot_age_s: f64,
    pub epoch_s: f64,
}

/// Rebuilds tables and places pending bulk and storage tasks one at a time
/// in deadline order.
pub fn geo_global_plan(input: GlobalPlanInput<'_>, audit: &mut AccessAudit) -> GlobalPlan {
    audit.record(ControllerTier::GeoGlobal, AccessScope::Global);
    let g = input.graph;
    let tables = build_tables(
        g,
        input.table_nodes,
        input.roles,
        input.red_forecast,
        input.now_s,
        input.valid_until,
        input.probe_bits,
    );
    let mut order: Vec<&PendingTask> = input
        .pending
        .iter()
        .filter(|p| matches!(p.task.class, TaskClass::BulkTraining | TaskClass::StorageRetrieval))
        .collect();
    order.sort_by(|a, b| {
        let da = a.task.absolute_deadline().unwrap_or(f64::INFINITY);
        let db = b.task.absolute_deadline().unwrap_or(f64::INFINITY);
        da.total_cmp(&db)
            .then(a.task.arrival_time_s.total_cmp(&b.task.arrival_time_s))
            .then(a.task.id.cmp(&b.task.id))
    });
    let mut res = input.reservations;
    let mut placements = Vec::new();
    for p in order {
        let role = class_role(p.task.class);
        let preferred: Vec<NodeId> = input
            .roles
            .targets(role, p.location)
            .into_iter()
            .filter(|n| !input.red_forecast.contains(n) || p.task.class == TaskClass::StorageRetrieval)
            .collect();
        let return_to: Vec<NodeId> = if p.task.class == TaskClass::BulkTraining {
            input.roles.gateways.clone()
        } else {
            Vec::new()
        };
        let query = |candidates: &[NodeId], res: &Reservations| {
            let q = PlacementQuery {
                task: &p.task,
                source: p.location,
                release_s: p.release_s.max(input.now_s),
                candidates,
                return_to: &return_to,
            };
            place_task(g, res, &input.weights, &input.policy, &q)
        };
        let mut result = query(&preferred, &res);
        if result.is_err() && p.task.class == TaskClass::BulkTraining {
            let any: Vec<NodeId> = input
                .roles
                .layers
                .iter()
                .filter(|(id, l)| l.is_orbital() || **l == Layer::Lunar && !input.red_forecast.contains(id))
                .map(|(id, _)| *id)
                .collect();
            result = query(&any, &res);
        }
        if let Ok(d) = &result {
            res.commit(d);
        }
        placements.push((p.task.id, result));
    }
    GlobalPlan {
        tables,
        placements,
        reservations: res,
        degraded_view: input.snapshot_age_s > 2.0 * input.epoch_s,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WatchdogConfig {
    pub enabled: bool,
    pub dose_fraction: f64,
    pub risk_threshold: f64,
}

impl Default for WatchdogConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            dose_fraction: 0.9,
            risk_threshold: 0.05,
        }
    }
}

impl WatchdogConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.dose_fraction > 0.0 && self.dose_fraction <= 1.0) {
            return Err(ConfigError::invalid("dose_fraction", "must lie in (0, 1]"));
        }
        if !(self.risk_threshold > 0.0 && self.risk_threshold < 1.0) {
            return Err(ConfigError::invalid("risk_threshold", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunningTask {
    pub task_id: TaskId,
    pub class: TaskClass,
    pub progress: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HealthSnapshot {
    pub node_id: NodeId,
    pub alive: bool,
    pub dose_fraction: f64,
    pub hazard_rate_per_s: f64,
    pub running: Vec<RunningTask>,
}

impl HealthSnapshot {
    pub fn degrading(&self, cfg: &WatchdogConfig, epoch_s: f64) -> bool {
        let risk = 1.0 - (-self.hazard_rate_per_s * epoch_s).exp();
        self.alive && (self.dose_fraction > cfg.dose_fraction || risk > cfg.risk_threshold)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct WatchdogOutcome {
    pub degrading: Vec<NodeId>,
    /// Tasks to checkpoint before they leave.
    pub checkpoint: Vec<TaskId>,
    pub migrations: Vec<MigrationPlan>,
    pub unprotected: Vec<TaskId>,
}

/// Flags degrading nodes and plans the move of their running
/// checkpointable tasks. `target` picks a destination and transfer route
/// for a task leaving a node, or `None` if nothing is feasible.
pub fn degradation_watchdog(
    snapshots: &[HealthSnapshot],
    cfg: &WatchdogConfig,
    epoch_s: f64,
    mut target: impl FnMut(NodeId, &RunningTask) -> Option<(NodeId, Option<Route>)>,
) -> WatchdogOutcome {
    let mut out = WatchdogOutcome::default();
    if !cfg.enabled {
        return out;
    }
    for s in snapshots {
        if !s.degrading(cfg, epoch_s) {
            continue;
        }
        out.degrading.push(s.node_id);
        for t in s.running.iter().filter(|t| t.class.flags().checkpointable) {
            out.checkpoint.push(t.task_id);
            match target(s.node_id, t) {
                Some((to, route)) => out.migrations.push(MigrationPlan {
                    task_id: t.task_id,
                    from_node: s.node_id,
                    to_node: to,
                    checkpoint_progress: t.progress,
                    transfer_route: route,
                    trigger: MigrationTrigger::DegradationForecast,
                }),
                None => out.unprotected.push(t.task_id),
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlaPolicy {
    pub quantile: f64,
    /// Latency bound at `quantile`, per class.
    pub latency_bounds_s: BTreeMap<TaskClass, f64>,
    pub max_miss_fraction: f64,
    pub latency_weight_multiplier: f64,
}

impl Default for SlaPolicy {
    fn default() -> Self {
        Self {
            quantile: 0.95,
            latency_bounds_s: BTreeMap::from([(TaskClass::RealTimeInference, 30.0)]),
            max_miss_fraction: 0.1,
            latency_weight_multiplier: 2.0,
        }
    }
}

/// Largest accepted latency-weight multiplier.
pub const MAX_LATENCY_MULTIPLIER: f64 = 10.0;

impl SlaPolicy {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(ConfigError::invalid("quantile", "must lie in (0, 1)"));
        }
        for (class, b) in &self.latency_bounds_s {
            if !(*b > 0.0) {
                return Err(ConfigError::invalid(format!("latency_bounds_s.{class}"), "must be > 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.max_miss_fraction) {
            return Err(ConfigError::invalid("max_miss_fraction", "must lie in [0, 1]"));
        }
        if !(1.0..=MAX_LATENCY_MULTIPLIER).contains(&self.latency_weight_multiplier) {
            return Err(ConfigError::invalid(
                "latency_weight_multiplier",
                format!("must lie in [1, {MAX_LATENCY_MULTIPLIER}]"),
            ));
        }
        Ok(())
    }

    /// Weights for the next epoch: the latency weight is multiplied once
    /// after a breach, never compounded.
    pub fn effective_weights(&self, base: &CostWeights, breach: bool) -> CostWeights {
        if breach {
            CostWeights {
                w_latency: base.w_latency * self.latency_weight_multiplier,
                ..*base
            }
        } else {
            *base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyRecord {
    pub class: TaskClass,
    pub latency_s: f64,
    pub deadline_met: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassCompliance {
    pub samples: usize,
    pub quantile_latency_s: f64,
    pub bound_s: Option<f64>,
    pub miss_fraction: f64,
    pub breach: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SlaReport {
    pub classes: BTreeMap<TaskClass, ClassCompliance>,
    pub breach: bool,
}

/// Nearest-rank quantile of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

pub fn sla_monitor(window: &[LatencyRecord], policy: &SlaPolicy) -> SlaReport {
    let mut by_class: BTreeMap<TaskClass, Vec<&LatencyRecord>> = BTreeMap::new();
    for r in window {
        by_class.entry(r.class).or_default().push(r);
    }
    let mut report = SlaReport::default();
    for (class, recs) in by_class {
        let lat: Vec<f64> = recs.iter().map(|r| r.latency_s).collect();
        let q = quantile(&lat, policy.quantile).unwrap_or(0.0);
        let misses = recs.iter().filter(|r| !r.deadline_met).count();
        let miss_fraction = misses as f64 / recs.len() as f64;
        let bound = policy.latency_bounds_s.get(&class).copied();
        let breach = bound.is_some_and(|b| q > b) || miss_fraction > policy.max_miss_fraction;
        report.breach |= breach;
        report.classes.insert(
            class,
            ClassCompliance {
                samples: recs.len(),
                quantile_latency_s: q,
                bound_s: bound,
                miss_fraction,
                breach,
            },
        );
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact_graph::{
        build_time_expanded_graph, Contact, ContactKind, ForecastSample, ForecastSet, NodeForecast, NodeProfile,
    };
    use crate::traffic::Origin;

    fn view(zone: EnergyZone, capacity_free: bool) -> LocalView {
        LocalView {
            node_id: NodeId(1),
            now_s: 100.0,
            zone,
            thermal_headroom: 0.5,
            capacity_free,
            lightweight_limit: 5.0,
        }
    }

    fn table(until: f64) -> PrecomputedTable {
        let entry = TableEntry {
            role: DestinationRole::Peer,
            next_hop: Some(NodeId(2)),
            fallback: Some(NodeId(3)),
        };
        PrecomputedTable {
            node_id: NodeId(1),
            valid_from_s: 0.0,
            valid_until_s: until,
            entries: TaskClass::ALL.iter().map(|&c| (c, entry)).collect(),
        }
    }

    #[test]
    fn local_decisions() {
        let p = ZonePolicy::default();
        let mut audit = AccessAudit::default();
        let t = table(600.0);
        let rti = TaskClass::RealTimeInference;
        assert_eq!(
            leo_local_decide(&view(EnergyZone::Green, true), rti, 1.0, &p, Some(&t), &mut audit),
            LocalAction::Execute
        );
        assert_eq!(
            leo_local_decide(&view(EnergyZone::Red, true), rti, 1.0, &p, Some(&t), &mut audit),
            LocalAction::Queue { stale_table: false }
        );
        assert_eq!(
            leo_local_decide(
                &view(EnergyZone::Red, true),
                TaskClass::Housekeeping,
                1.0,
                &p,
                None,
                &mut audit
            ),
            LocalAction::Execute
        );
        // yellow rejects heavy inference and forwards it
        assert_eq!(
            leo_local_decide(&view(EnergyZone::Yellow, true), rti, 50.0, &p, Some(&t), &mut audit),
            LocalAction::Forward {
                next_hop: NodeId(2),
                fallback: Some(NodeId(3))
            }
        );
        assert_eq!(
            leo_local_decide(
                &view(EnergyZone::Green, false),
                rti,
                1.0,
                &p,
                Some(&table(50.0)),
                &mut audit
            ),
            LocalAction::Queue { stale_table: true }
        );
        assert_eq!(audit.reads(ControllerTier::LeoLocal, AccessScope::Local), 5);
        assert_eq!(audit.violations(), 0);
    }

    fn snap(id: u32, n: usize, class: TaskClass) -> QueueSnapshot {
        QueueSnapshot {
            node_id: NodeId(id),
            alive: true,
            zone: EnergyZone::Green,
            lightweight_limit: 5.0,
            queued: (0..n)
                .map(|i| QueuedTask {
                    task_id: TaskId(id as u64 * 100 + i as u64),
                    class,
                    arrival_s: i as f64,
                    demand_units: 10.0,
                })
                .collect(),
        }
    }

    fn direct(_: &QueuedTask, _: NodeId, _: NodeId) -> Option<Route> {
        Some(Route {
            hops: Vec::new(),
            delivery_s: 0.0,
        })
    }

    #[test]
    fn rebalance_ten_two_moves_two() {
        let snaps = [
            snap(1, 10, TaskClass::InterruptibleCompression),
            snap(2, 2, TaskClass::InterruptibleCompression),
        ];
        let fp: BTreeSet<NodeId> = [NodeId(1), NodeId(2)].into();
        let mut audit = AccessAudit::default();
        let out = meo_regional_rebalance(NodeId(9), &fp, &snaps, 2.0, direct, &mut audit);
        assert_eq!(out.migrations.len(), 2);
        assert!(out
            .migrations
            .iter()
            .all(|m| m.from_node == NodeId(1) && m.to_node == NodeId(2)));
        // newest first
        assert_eq!(out.migrations[0].task_id, TaskId(109));
        assert_eq!(out.migrations[1].task_id, TaskId(108));
        assert!(out.sla_risk.is_empty());
        assert_eq!(audit.violations(), 0);
    }

    #[test]
    fn rebalance_flags_unmovable_load() {
        let snaps = [
            snap(1, 10, TaskClass::RealTimeInference),
            snap(2, 2, TaskClass::RealTimeInference),
        ];
        let fp: BTreeSet<NodeId> = [NodeId(1), NodeId(2)].into();
        let out = meo_regional_rebalance(NodeId(9), &fp, &snaps, 2.0, direct, &mut AccessAudit::default());
        assert!(out.migrations.is_empty());
        assert_eq!(out.sla_risk, vec![NodeId(1)]);
    }

    #[test]
    fn rebalance_respects_target_zone_and_reachability() {
        let mut red = snap(2, 0, TaskClass::InterruptibleCompression);
        red.zone = EnergyZone::Red;
        let snaps = [snap(1, 10, TaskClass::InterruptibleCompression), red.clone()];
        let fp: BTreeSet<NodeId> = [NodeId(1), NodeId(2)].into();
        let out = meo_regional_rebalance(NodeId(9), &fp, &snaps, 2.0, direct, &mut AccessAudit::default());
        assert!(out.migrations.is_empty());
        // a red holder hands work off
        red.queued = snap(2, 6, TaskClass::InterruptibleCompression).queued;
        let snaps = [red, snap(1, 1, TaskClass::InterruptibleCompression)];
        let out = meo_regional_rebalance(NodeId(9), &fp, &snaps, 2.0, direct, &mut AccessAudit::default());
        assert_eq!(out.migrations.len(), 2);
        assert!(out.migrations.iter().all(|m| m.trigger == MigrationTrigger::RedZone));
        let snaps = [
            snap(1, 10, TaskClass::InterruptibleCompression),
            snap(2, 2, TaskClass::InterruptibleCompression),
        ];
        let out = meo_regional_rebalance(NodeId(9), &fp, &snaps, 2.0, |_, _, _| None, &mut AccessAudit::default());
        assert!(out.migrations.is_empty());
    }

    #[test]
    fn rebalance_outside_footprint_is_audited() {
        let snaps = [
            snap(1, 4, TaskClass::InterruptibleCompression),
            snap(2, 4, TaskClass::InterruptibleCompression),
        ];
        let fp: BTreeSet<NodeId> = [NodeId(1)].into();
        let mut audit = AccessAudit::default();
        meo_regional_rebalance(NodeId(9), &fp, &snaps, 2.0, direct, &mut audit);
        assert_eq!(audit.violations(), 1);
    }

    #[test]
    fn sla_breach_doubles_latency_weight_once() {
        let policy = SlaPolicy {
            latency_bounds_s: BTreeMap::from([(TaskClass::RealTimeInference, 0.5)]),
            ..SlaPolicy::default()
        };
        let window: Vec<LatencyRecord> = (0..20)
            .map(|i| LatencyRecord {
                class: TaskClass::RealTimeInference,
                latency_s: if i < 19 { 0.8 } else { 0.1 },
                deadline_met: true,
            })
            .collect();
        let report = sla_monitor(&window, &policy);
        let c = report.classes[&TaskClass::RealTimeInference];
        assert!((c.quantile_latency_s - 0.8).abs() < 1e-12);
        assert!(report.breach);
        let base = CostWeights::default();
        let w = policy.effective_weights(&base, report.breach);
        assert_eq!(w.w_latency, 2.0 * base.w_latency);
        assert_eq!(policy.effective_weights(&base, true), w);
        assert_eq!(policy.effective_weights(&base, false), base);
    }

    #[test]
    fn sla_miss_fraction_breach() {
        let policy = SlaPolicy::default();
        let window: Vec<LatencyRecord> = (0..10)
            .map(|i| LatencyRecord {
                class: TaskClass::BulkTraining,
                latency_s: 100.0,
                deadline_met: i >= 2,
            })
            .collect();
        let report = sla_monitor(&window, &policy);
        assert!(report.breach);
        assert_eq!(report.classes[&TaskClass::BulkTraining].bound_s, None);
    }

    #[test]
    fn nearest_rank_quantile() {
        assert_eq!(quantile(&[], 0.95), None);
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantile(&v, 0.95), Some(95.0));
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), Some(2.0));
        assert_eq!(quantile(&[7.0], 0.01), Some(7.0));
    }

    #[test]
    fn sla_policy_validation() {
        assert!(SlaPolicy::default().validate().is_ok());
        let bad = SlaPolicy {
            latency_weight_multiplier: 50.0,
            ..SlaPolicy::default()
        };
        assert!(bad.validate().is_err());
        assert!(WatchdogConfig::default().validate().is_ok());
    }

    fn health(id: u32, dose: f64, hazard: f64) -> HealthSnapshot {
        HealthSnapshot {
            node_id: NodeId(id),
            alive: true,
            dose_fraction: dose,
            hazard_rate_per_s: hazard,
            running: vec![
                RunningTask {
                    task_id: TaskId(id as u64 * 10),
                    class: TaskClass::BulkTraining,
                    progress: 0.4,
                },
                RunningTask {
                    task_id: TaskId(id as u64 * 10 + 1),
                    class: TaskClass::RealTimeInference,
                    progress: 0.1,
                },
            ],
        }
    }

    #[test]
    fn watchdog_migrates_checkpointable_work() {
        let cfg = WatchdogConfig::default();
        let snaps = [health(1, 0.95, 0.0), health(2, 0.1, 1e-3), health(3, 0.1, 1e-6)];
        let out = degradation_watchdog(&snaps, &cfg, 60.0, |from, _| {
            (from != NodeId(2)).then_some((NodeId(7), None))
        });
        assert_eq!(out.degrading, vec![NodeId(1), NodeId(2)]);
        assert_eq!(out.checkpoint, vec![TaskId(10), TaskId(20)]);
        assert_eq!(out.migrations.len(), 1);
        assert_eq!(out.migrations[0].checkpoint_progress, 0.4);
        assert_eq!(out.migrations[0].trigger, MigrationTrigger::DegradationForecast);
        assert_eq!(out.unprotected, vec![TaskId(20)]);
        let off = WatchdogConfig { enabled: false, ..cfg };
        assert_eq!(
            degradation_watchdog(&snaps, &off, 60.0, |_, _| None),
            WatchdogOutcome::default()
        );
    }

    #[test]
    fn validity_covers_next_ground_gap() {
        // contact until 200, then gap until 900
        let w = [(0.0, 200.0), (900.0, 1000.0)];
        assert_eq!(table_validity(&w, 100.0, 300.0, 5000.0), 900.0);
        assert_eq!(table_validity(&w, 950.0, 300.0, 5000.0), 5000.0);
        assert_eq!(table_validity(&[], 0.0, 300.0, 200.0), 300.0);
    }

    fn sample() -> ForecastSample {
        ForecastSample {
            time_s: 0.0,
            zone: EnergyZone::Green,
            available_capacity_units: 10.0,
            thermal_headroom: 0.5,
            risk_rate_per_s: 0.0,
            alive: true,
        }
    }

    fn link(a: u32, b: u32, s: f64, e: f64, kind: ContactKind) -> [Contact; 2] {
        let c = |src, dst| Contact {
            src: NodeId(src),
            dst: NodeId(dst),
            start_s: s,
            end_s: e,
            rate_bps: 1e6,
            owlt_s: 0.01,
            kind,
        };
        [c(a, b), c(b, a)]
    }

    fn setup() -> (TimeExpandedGraph, RoleMap) {
        // 1,2,3 LEO; 10 GEO; 20 ground. 1-2 early, 1-3 late, 2-10, 3-10, 10-20
        let layers = [
            (1, Layer::Leo),
            (2, Layer::Leo),
            (3, Layer::Leo),
            (10, Layer::Geo),
            (20, Layer::Ground),
        ];
        let fs = ForecastSet {
            start_s: 0.0,
            end_s: 600.0,
            nodes: layers
                .iter()
                .map(|&(id, layer)| NodeForecast {
                    profile: NodeProfile {
                        id: NodeId(id),
                        layer,
                        p_tx_w_per_bps: 1e-8,
                        compute_j_per_unit: 1.0,
                    },
                    samples: vec![sample()],
                })
                .collect(),
        };
        let mut plan = Vec::new();
        plan.extend(link(1, 2, 0.0, 600.0, ContactKind::Isl));
        plan.extend(link(1, 3, 300.0, 600.0, ContactKind::Isl));
        plan.extend(link(2, 10, 0.0, 600.0, ContactKind::Isl));
        plan.extend(link(3, 10, 0.0, 600.0, ContactKind::Isl));
        plan.extend(link(10, 20, 0.0, 600.0, ContactKind::Feeder));
        let g = build_time_expanded_graph(&plan, &fs, 30.0, 600.0, 0.0).unwrap();
        let roles = RoleMap {
            layers: layers.iter().map(|&(id, l)| (NodeId(id), l)).collect(),
            gateways: vec![NodeId(20)],
        };
        (g, roles)
    }

    #[test]
    fn tables_rank_by_delivery_and_skip_red() {
        let (g, roles) = setup();
        let nodes = [NodeId(1)];
        let t = build_tables(&g, &nodes, &roles, &BTreeSet::new(), 0.0, &BTreeMap::new(), 1e5);
        let e = t[&NodeId(1)].entries[&TaskClass::BulkTraining];
        assert_eq!(e.role, DestinationRole::Global);
        assert_eq!(e.next_hop, Some(NodeId(2)));
        assert_eq!(e.fallback, Some(NodeId(3)));
        let red: BTreeSet<NodeId> = [NodeId(2)].into();
        let t = build_tables(&g, &nodes, &roles, &red, 0.0, &BTreeMap::new(), 1e5);
        let t1 = &t[&NodeId(1)];
        assert_eq!(t1.entries[&TaskClass::BulkTraining].next_hop, Some(NodeId(3)));
        assert_eq!(t1.entries[&TaskClass::RealTimeInference].next_hop, Some(NodeId(3)));
        // storage is transfer only and may still cross a red node
        assert_eq!(t1.entries[&TaskClass::StorageRetrieval].next_hop, Some(NodeId(2)));
        assert_eq!(t1.valid_until_s, g.end_s());
    }

    fn bulk(id: u64, deadline: f64) -> PendingTask {
        PendingTask {
            task: Task {
                id: TaskId(id),
                class: TaskClass::BulkTraining,
                arrival_time_s: 0.0,
                origin: Origin::Node(NodeId(1)),
                input_bits: 1e6,
                compute_demand_units: 100.0,
                output_bits: 1e5,
                deadline_s: Some(deadline),
                replication_k: 1,
                parent: None,
            },
            location: NodeId(1),
            release_s: 0.0,
        }
    }

    #[test]
    fn global_plan_places_bulk_on_geo_in_deadline_order() {
        let (g, roles) = setup();
        let pending = [bulk(1, 500.0), bulk(2, 100.0)];
        let nodes = [NodeId(1), NodeId(2), NodeId(3)];
        let mut audit = AccessAudit::default();
        let plan = geo_global_plan(
            GlobalPlanInput {
                graph: &g,
                reservations: Reservations::default(),
                now_s: 0.0,
                weights: CostWeights::default(),
                policy: ZonePolicy::default(),
                roles: &roles,
                table_nodes: &nodes,
                red_forecast: &BTreeSet::new(),
                valid_until: &BTreeMap::new(),
                pending: &pending,
                probe_bits: 1e5,
                snapshot_age_s: 0.0,
                epoch_s: 300.0,
            },
            &mut audit,
        );
        assert_eq!(plan.tables.len(), 3);
        let ids: Vec<TaskId> = plan.placements.iter().map(|p| p.0).collect();
        assert_eq!(ids, vec![TaskId(2), TaskId(1)]);
        for (_, d) in &plan.placements {
            assert_eq!(d.as_ref().unwrap().execution_node, NodeId(10));
        }
        assert!(!plan.degraded_view);
        assert_eq!(audit.reads(ControllerTier::GeoGlobal, AccessScope::Global), 1);
        assert_eq!(audit.violations(), 0);
    }
}
