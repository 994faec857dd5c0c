//! Online distributed scheduler.
//!
//! Each slot runs in three phases:
//!
//! 1. Every aggregator ranks the unfinished devices in its cluster and serves
//!    them in that order: first everyone gets their lowest mode while budget
//!    remains, then the leftover budget upgrades served devices one mode step
//!    at a time in the same order.
//! 2. Aggregators publish their residual capacity ([`StatusList`]).
//! 3. Mobile devices that got no power compare the projected deadline loss of
//!    waiting at home against moving to an aggregator with spare capacity.
//!
//! Decisions at slot `t` only look at devices that have arrived by `t`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Action, AggregatorId, DeviceId, DeviceState, Location, MovementMatrix, Scenario, Slot, SlotDecision, SystemConfig, ENERGY_EPS};
use crate::priority::{self, PriorityEntry};
use crate::utility::{advance, deadline_loss};

/// Order in which an aggregator serves its cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ranking {
    /// Descending deficit-and-urgency priority.
    Priority,
    /// Ascending deadline.
    EarliestDeadline,
    /// Descending remaining demand.
    HighestPower,
}

/// How leftover budget is spread after the lowest-mode pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpgradePolicy {
    /// One mode step per device per round, rounds repeat until nothing fits.
    #[default]
    RoundRobin,
    /// Each device in turn climbs as far as the budget allows.
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub ranking: Ranking,
    pub mobility: bool,
    pub upgrade: UpgradePolicy,
    /// Schedule aggregators on the rayon pool. Results do not depend on it.
    pub parallel: bool,
}

impl SchedulerConfig {
    pub fn heuristic() -> Self {
        Self { ranking: Ranking::Priority, mobility: true, upgrade: UpgradePolicy::RoundRobin, parallel: false }
    }

    pub fn with_ranking(ranking: Ranking) -> Self {
        Self { ranking, ..Self::heuristic() }
    }

    /// Turn device movement on or off. Disabled means every device stays in its home cluster.
    pub fn set_mobility_enabled(mut self, flag: bool) -> Self {
        self.mobility = flag;
        self
    }
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self::heuristic()
    }
}

/// Mutable per-slot view of one aggregator.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatorState {
    pub id: AggregatorId,
    pub budget: f64,
    pub members: Vec<DeviceId>,
    pub committed: f64,
}

impl AggregatorState {
    pub fn new(id: AggregatorId, budget: f64) -> Self {
        Self { id, budget, members: Vec::new(), committed: 0.0 }
    }

    pub fn residual(&self) -> f64 {
        (self.budget - self.committed).max(0.0)
    }
}

/// What one aggregator decided for its cluster this slot.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSchedule {
    pub aggregator: AggregatorId,
    /// Indices into the cluster slice, in service order.
    pub order: Vec<usize>,
    /// Chosen mode per cluster member (0 = not served), indexed like the cluster slice.
    pub modes: Vec<usize>,
    /// Deficit of everyone ranked ahead, per cluster member (kWh).
    pub queue_ahead_kwh: Vec<f64>,
    pub committed: f64,
}

impl ClusterSchedule {
    pub fn decisions(&self, cluster: &[&DeviceState], t: Slot) -> Vec<SlotDecision> {
        self.order
            .iter()
            .map(|&i| SlotDecision {
                device: cluster[i].id(),
                slot: t,
                action: match self.modes[i] {
                    0 => Action::Idle,
                    mode => Action::Serve { mode, aggregator: self.aggregator },
                },
            })
            .collect()
    }
}

/// Full decision set of one slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotSchedule {
    pub slot: Slot,
    pub decisions: Vec<SlotDecision>,
}

/// Service order for `cluster` under `ranking`.
pub fn service_order(cluster: &[&DeviceState], t: Slot, ranking: Ranking) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..cluster.len()).collect();
    match ranking {
        Ranking::Priority => {
            let entries: Vec<PriorityEntry> = cluster
                .iter()
                .map(|d| PriorityEntry {
                    device: d.id(),
                    priority: priority::priority(d.progress, d.need(), t, d.request.deadline_slot),
                    criticality: d.request.criticality,
                    min_mode_kw: d.request.power_modes_kw.lowest(),
                })
                .collect();
            idx.sort_by(|&a, &b| priority::compare(&entries[a], &entries[b]));
        }
        Ranking::EarliestDeadline => {
            idx.sort_by_key(|&i| (cluster[i].request.deadline_slot, cluster[i].id()));
        }
        Ranking::HighestPower => {
            idx.sort_by(|&a, &b| {
                cluster[b].deficit().total_cmp(&cluster[a].deficit()).then(cluster[a].id().cmp(&cluster[b].id()))
            });
        }
    }
    idx
}

/// Lowest-mode pass followed by upgrade passes, in `order`. Returns the
/// mode per member and the committed power.
pub fn serve_in_order(
    cluster: &[&DeviceState],
    order: &[usize],
    budget: f64,
    slot_length_h: f64,
    upgrade: UpgradePolicy,
) -> (Vec<usize>, f64) {
    let mut modes = vec![0usize; cluster.len()];
    let mut used = 0.0;
    for &i in order {
        let lowest = cluster[i].request.power_modes_kw.lowest();
        if used + lowest <= budget + ENERGY_EPS {
            modes[i] = 1;
            used += lowest;
        }
    }

    // Upgrade only while the current mode would not already finish the device this slot.
    let try_upgrade = |i: usize, modes: &mut [usize], used: &mut f64| -> bool {
        let d = cluster[i];
        let m = modes[i];
        let levels = d.request.power_modes_kw.levels();
        if m == 0 || m >= levels.len() {
            return false;
        }
        let cur = levels[m - 1];
        if cur * slot_length_h >= d.deficit() {
            return false;
        }
        let next = levels[m];
        if *used - cur + next <= budget + ENERGY_EPS {
            *used += next - cur;
            modes[i] = m + 1;
            true
        } else {
            false
        }
    };

    match upgrade {
        UpgradePolicy::RoundRobin => loop {
            let mut changed = false;
            for &i in order {
                changed |= try_upgrade(i, &mut modes, &mut used);
            }
            if !changed {
                break;
            }
        },
        UpgradePolicy::Greedy => {
            for &i in order {
                while try_upgrade(i, &mut modes, &mut used) {}
            }
        }
    }
    (modes, used)
}

/// Rank and serve one cluster. Every member must be present at `agg`, arrived, and unfinished.
pub fn schedule_slot(
    agg: &AggregatorState,
    cluster: &[&DeviceState],
    t: Slot,
    ranking: Ranking,
    upgrade: UpgradePolicy,
    slot_length_h: f64,
) -> ClusterSchedule {
    let order = service_order(cluster, t, ranking);
    let (modes, committed) = serve_in_order(cluster, &order, agg.budget, slot_length_h, upgrade);
    let mut queue_ahead_kwh = vec![0.0; cluster.len()];
    let mut ahead = 0.0;
    for &i in &order {
        queue_ahead_kwh[i] = ahead;
        ahead += cluster[i].deficit();
    }
    ClusterSchedule { aggregator: agg.id, order, modes, queue_ahead_kwh, committed }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatorStatus {
    pub aggregator: AggregatorId,
    pub budget: f64,
    pub committed: f64,
    pub residual: f64,
    pub cluster_size: usize,
}

/// Snapshot of every aggregator's capacity after the scheduling phase.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatusList {
    pub slot: Slot,
    pub entries: Vec<AggregatorStatus>,
}

impl StatusList {
    pub fn get(&self, a: AggregatorId) -> Option<&AggregatorStatus> {
        self.entries.get(a.0).filter(|e| e.aggregator == a)
    }
}

pub fn publish_status(aggs: &[AggregatorState], t: Slot) -> StatusList {
    StatusList {
        slot: t,
        entries: aggs
            .iter()
            .map(|a| AggregatorStatus {
                aggregator: a.id,
                budget: a.budget,
                committed: a.committed,
                residual: a.residual(),
                cluster_size: a.members.len(),
            })
            .collect(),
    }
}

/// Cluster-local information a device receives with the schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueueInfo {
    /// Remaining demand of everyone served before this device (kWh).
    pub ahead_kwh: f64,
    /// Budget of the aggregator the device is attached to (kW).
    pub home_budget: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MobilityChoice {
    Stay,
    Move {
        to: AggregatorId,
        /// Projected deadline loss avoided by moving.
        deadline_saving: f64,
        /// Ledger cost of the move (twice delay times per-slot cost).
        movement_loss: f64,
    },
}

/// Deadline loss accumulated from slot `from` until the deficit is covered
/// (or the horizon ends), with service at `rate_kwh` per slot starting at `start`.
#[allow(clippy::too_many_arguments)]
pub fn projected_deadline_loss(
    progress: f64,
    need: f64,
    from: Slot,
    start: Slot,
    rate_kwh: f64,
    deadline: Slot,
    criticality: f64,
    horizon: Slot,
    beta_max: f64,
) -> f64 {
    let mut p = progress;
    let mut loss = 0.0;
    for s in from..horizon {
        if s >= start && p < need {
            p = if rate_kwh >= need - p { need } else { p + rate_kwh };
        }
        if p >= need {
            break;
        }
        loss += deadline_loss(p, need, s, deadline, criticality, beta_max);
    }
    loss
}

/// Device-level move decision for a mobile device that got no power at `t`.
///
/// Staying assumes the device waits until the work queued ahead of it has
/// been served at full aggregator budget, then charges at its best mode.
/// Moving assumes immediate service at the target on arrival, at the best
/// mode the target's published residual allows. The cheapest affordable
/// target wins; the device moves only if the deadline loss it avoids exceeds
/// the movement loss.
pub fn mobility_decision(
    dev: &DeviceState,
    queue: QueueInfo,
    status: &StatusList,
    cfg: &SystemConfig,
    t: Slot,
) -> MobilityChoice {
    let req = &dev.request;
    let Some(here) = dev.cluster() else { return MobilityChoice::Stay };
    if !req.mobile || !dev.is_active(t) || dev.is_complete() {
        return MobilityChoice::Stay;
    }
    let modes = &req.power_modes_kw;
    let t0 = cfg.slot_length_h;
    let horizon = cfg.horizon_slots;
    let mm: &MovementMatrix = &cfg.movement;

    let (stay_start, stay_rate) = match modes.best_within(queue.home_budget) {
        Some(m) => {
            let wait = (queue.ahead_kwh / (queue.home_budget * t0)).floor() as usize;
            (t + 1 + wait, modes.level(m).unwrap_or(0.0) * t0)
        }
        None => (horizon, 0.0),
    };
    let stay = projected_deadline_loss(
        dev.progress,
        dev.need(),
        t,
        stay_start,
        stay_rate,
        req.deadline_slot,
        req.criticality,
        horizon,
        cfg.beta_max,
    );
    if stay == 0.0 {
        return MobilityChoice::Stay;
    }

    let available = dev.available_energy();
    let mut best: Option<(f64, AggregatorId, f64, f64)> = None;
    for entry in &status.entries {
        let target = entry.aggregator;
        if target == here {
            continue;
        }
        let opt = mm.option(here, target);
        let cost = opt.total_cost();
        if cost > available + ENERGY_EPS {
            continue;
        }
        let Some(m) = modes.best_within(entry.residual) else { continue };
        let rate = modes.level(m).unwrap_or(0.0) * t0;
        let moved = projected_deadline_loss(
            dev.progress,
            dev.need() + cost,
            t,
            t + opt.delay,
            rate,
            req.deadline_slot,
            req.criticality,
            horizon,
            cfg.beta_max,
        );
        let movement_loss = 2.0 * cost;
        let total = moved + movement_loss;
        if best.is_none_or(|b| total < b.0) {
            best = Some((total, target, moved, movement_loss));
        }
    }
    match best {
        Some((_, to, moved, movement_loss)) if stay - moved > movement_loss => {
            MobilityChoice::Move { to, deadline_saving: stay - moved, movement_loss }
        }
        _ => MobilityChoice::Stay,
    }
}

/// Everything a horizon run produces.
#[derive(Clone, Debug)]
pub struct HorizonRun {
    /// Final device states; `history` holds one action per slot.
    pub states: Vec<DeviceState>,
    /// Committed power per slot per aggregator (kW).
    pub committed_kw: Vec<Vec<f64>>,
    pub slot_wall_ns: Vec<u64>,
    pub moves: usize,
}

impl HorizonRun {
    pub fn total_loss(&self) -> f64 {
        self.states.iter().map(|s| s.loss.total).sum()
    }

    /// Decision records ordered by device, then slot.
    pub fn decisions(&self) -> Vec<SlotDecision> {
        self.states
            .iter()
            .flat_map(|s| {
                s.history.iter().enumerate().map(|(t, &action)| SlotDecision { device: s.id(), slot: t, action })
            })
            .collect()
    }
}

/// Schedule every slot of `scenario` and return the decision matrix and loss ledger.
///
/// The scenario should already be validated; infeasible demand shows up as
/// loss, never as an error.
pub fn run_horizon(scenario: &Scenario, sched: &SchedulerConfig) -> HorizonRun {
    let cfg = &scenario.config;
    let mut states: Vec<DeviceState> = scenario.devices.iter().cloned().map(DeviceState::new).collect();
    let mut committed_kw = Vec::with_capacity(cfg.horizon_slots);
    let mut slot_wall_ns = Vec::with_capacity(cfg.horizon_slots);
    let mut moves = 0;

    for t in 0..cfg.horizon_slots {
        let started = Instant::now();
        let mut actions = vec![Action::Idle; states.len()];
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); cfg.num_aggregators];
        for (i, s) in states.iter().enumerate() {
            match s.location {
                Location::InTransit { from, to, .. } => actions[i] = Action::Move { from, to },
                Location::At(a) if s.is_active(t) && !s.is_complete() => members[a.0].push(i),
                Location::At(_) => {}
            }
        }

        let mut aggs: Vec<AggregatorState> = cfg
            .aggregators()
            .map(|a| {
                let mut st = AggregatorState::new(a, cfg.budget(a));
                st.members = members[a.0].iter().map(|&i| states[i].id()).collect();
                st
            })
            .collect();

        let plan = |a: usize| {
            let cluster: Vec<&DeviceState> = members[a].iter().map(|&i| &states[i]).collect();
            schedule_slot(&aggs[a], &cluster, t, sched.ranking, sched.upgrade, cfg.slot_length_h)
        };
        let schedules: Vec<ClusterSchedule> = if sched.parallel {
            (0..aggs.len()).into_par_iter().map(plan).collect()
        } else {
            (0..aggs.len()).map(plan).collect()
        };

        for (a, sch) in schedules.iter().enumerate() {
            aggs[a].committed = sch.committed;
            for (k, &mode) in sch.modes.iter().enumerate() {
                if mode > 0 {
                    actions[members[a][k]] = Action::Serve { mode, aggregator: AggregatorId(a) };
                }
            }
        }

        if sched.mobility {
            let status = publish_status(&aggs, t);
            for (a, sch) in schedules.iter().enumerate() {
                for &k in &sch.order {
                    if sch.modes[k] != 0 {
                        continue;
                    }
                    let i = members[a][k];
                    let queue = QueueInfo { ahead_kwh: sch.queue_ahead_kwh[k], home_budget: aggs[a].budget };
                    if let MobilityChoice::Move { to, .. } = mobility_decision(&states[i], queue, &status, cfg, t) {
                        actions[i] = Action::Move { from: AggregatorId(a), to };
                        moves += 1;
                    }
                }
            }
        }

        for (s, &action) in states.iter_mut().zip(&actions) {
            advance(s, action, t, cfg).expect("scheduler produced an inconsistent action");
        }
        committed_kw.push(aggs.iter().map(|a| a.committed).collect());
        slot_wall_ns.push(started.elapsed().as_nanos() as u64);
    }
    HorizonRun { states, committed_kw, slot_wall_ns, moves }
}
