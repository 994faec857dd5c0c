//! Depth-first branch and bound over joint per-slot actions.
//!
//! Every branch advances device states through [`crate::utility::advance`],
//! the same step function the online schedulers use, so the optimum is
//! directly comparable with their losses without any tolerance.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::ExactError;
use crate::model::{Action, AggregatorId, DeviceState, Location, Scenario, Slot, SlotDecision, SystemConfig, ENERGY_EPS};
use crate::utility::advance;

/// Enumeration guardrails. Instances beyond any cap are refused up front.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactCaps {
    pub max_devices: usize,
    pub max_slots: usize,
    pub max_modes: usize,
    pub max_aggregators: usize,
    /// Joint actions the search may expand before giving up.
    pub node_budget: u64,
}

impl Default for ExactCaps {
    fn default() -> Self {
        Self { max_devices: 4, max_slots: 8, max_modes: 3, max_aggregators: 3, node_budget: 100_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactInstance {
    pub scenario: Scenario,
    pub caps: ExactCaps,
}

impl ExactInstance {
    pub fn new(scenario: Scenario) -> Self {
        Self { scenario, caps: ExactCaps::default() }
    }

    pub fn with_caps(scenario: Scenario, caps: ExactCaps) -> Self {
        Self { scenario, caps }
    }

    /// Refuse instances outside the caps or failing model validation.
    pub fn check(&self) -> Result<(), ExactError> {
        let s = &self.scenario;
        let c = &self.caps;
        let modes = s.devices.iter().map(|d| d.power_modes_kw.count()).max().unwrap_or(0);
        let over = [
            ("devices", s.devices.len(), c.max_devices),
            ("slots", s.config.horizon_slots, c.max_slots),
            ("modes", modes, c.max_modes),
            ("aggregators", s.config.num_aggregators, c.max_aggregators),
        ];
        if let Some((what, n, cap)) = over.iter().find(|(_, n, cap)| n > cap) {
            return Err(ExactError::CapExceeded(format!("{n} {what}, cap is {cap}")));
        }
        let violations = s.validate();
        if !violations.is_empty() {
            return Err(ExactError::InvalidScenario(violations));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactSolution {
    pub loss: f64,
    /// One optimal decision matrix, ordered by device then slot.
    pub decisions: Vec<SlotDecision>,
    /// Joint actions expanded.
    pub nodes: u64,
}

/// Minimise total loss over every feasible decision matrix.
///
/// Pruning uses the loss accumulated so far (losses are non-negative) and a
/// dominance table: reaching the same device states at the same slot with
/// component-wise no smaller per-device losses cannot lead anywhere better.
pub fn solve_exact(instance: &ExactInstance) -> Result<ExactSolution, ExactError> {
    instance.check()?;
    let s = &instance.scenario;
    let states: Vec<DeviceState> = s.devices.iter().cloned().map(DeviceState::new).collect();
    let mut search = Search {
        cfg: &s.config,
        best: f64::INFINITY,
        best_history: Vec::new(),
        nodes: 0,
        budget: instance.caps.node_budget,
        memo: HashMap::new(),
    };
    search.dfs(0, &states)?;
    let decisions = search
        .best_history
        .iter()
        .zip(&s.devices)
        .flat_map(|(h, d)| h.iter().enumerate().map(move |(t, &action)| SlotDecision { device: d.id, slot: t, action }))
        .collect();
    Ok(ExactSolution { loss: search.best, decisions, nodes: search.nodes })
}

type StateKey = (u64, u64, Location);

/// Pareto front entries kept per memo key.
const FRONT_LIMIT: usize = 16;
const MEMO_LIMIT: usize = 4_000_000;

struct Search<'a> {
    cfg: &'a SystemConfig,
    best: f64,
    best_history: Vec<Vec<Action>>,
    nodes: u64,
    budget: u64,
    memo: HashMap<(Slot, Vec<StateKey>), Vec<Vec<f64>>>,
}

impl Search<'_> {
    fn dfs(&mut self, t: Slot, states: &[DeviceState]) -> Result<(), ExactError> {
        let total: f64 = states.iter().map(|s| s.loss.total).sum();
        if t == self.cfg.horizon_slots {
            if total < self.best {
                self.best = total;
                self.best_history = states.iter().map(|s| s.history.clone()).collect();
            }
            return Ok(());
        }
        if total >= self.best {
            return Ok(());
        }
        if self.dominated(t, states) {
            return Ok(());
        }
        let options: Vec<Vec<Action>> = states.iter().map(|s| options(s, t, self.cfg)).collect();
        let mut residual = self.cfg.budgets_kw.clone();
        let mut joint = Vec::with_capacity(states.len());
        self.enumerate(t, states, &options, &mut residual, &mut joint)
    }

    fn enumerate(
        &mut self,
        t: Slot,
        states: &[DeviceState],
        options: &[Vec<Action>],
        residual: &mut [f64],
        joint: &mut Vec<Action>,
    ) -> Result<(), ExactError> {
        let k = joint.len();
        if k == states.len() {
            self.nodes += 1;
            if self.nodes > self.budget {
                return Err(ExactError::NodeBudget(self.budget));
            }
            let mut next = states.to_vec();
            for (s, &a) in next.iter_mut().zip(joint.iter()) {
                advance(s, a, t, self.cfg).expect("enumerated actions are valid");
            }
            return self.dfs(t + 1, &next);
        }
        for &a in &options[k] {
            let draw = match a {
                Action::Serve { mode, aggregator } => Some((aggregator, states[k].request.power_modes_kw.level(mode).unwrap_or(0.0))),
                _ => None,
            };
            if let Some((AggregatorId(j), p)) = draw {
                if p > residual[j] + ENERGY_EPS {
                    continue;
                }
                residual[j] -= p;
            }
            joint.push(a);
            let r = self.enumerate(t, states, options, residual, joint);
            joint.pop();
            if let Some((AggregatorId(j), p)) = draw {
                residual[j] += p;
            }
            r?;
        }
        Ok(())
    }

    fn dominated(&mut self, t: Slot, states: &[DeviceState]) -> bool {
        let key = (t, states.iter().map(|s| (s.progress.to_bits(), s.extra_demand.to_bits(), s.location)).collect::<Vec<_>>());
        let losses: Vec<f64> = states.iter().map(|s| s.loss.total).collect();
        let full = self.memo.len() >= MEMO_LIMIT;
        match self.memo.get_mut(&key) {
            Some(front) => {
                if front.iter().any(|v| v.iter().zip(&losses).all(|(a, b)| a <= b)) {
                    return true;
                }
                front.retain(|v| !v.iter().zip(&losses).all(|(a, b)| b <= a));
                if front.len() < FRONT_LIMIT {
                    front.push(losses);
                }
            }
            None if !full => {
                self.memo.insert(key, vec![losses]);
            }
            None => {}
        }
        false
    }
}

/// Every action device `s` may take at slot `t`, most promising first.
fn options(s: &DeviceState, t: Slot, cfg: &SystemConfig) -> Vec<Action> {
    let here = match s.location {
        Location::InTransit { from, to, .. } => return vec![Action::Move { from, to }],
        Location::At(a) => a,
    };
    if !s.is_active(t) || s.is_complete() {
        return vec![Action::Idle];
    }
    let mut v: Vec<Action> =
        (1..=s.request.power_modes_kw.count()).rev().map(|mode| Action::Serve { mode, aggregator: here }).collect();
    v.push(Action::Idle);
    v.extend(cfg.aggregators().filter(|&b| b != here).map(|to| Action::Move { from: here, to }));
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::validate_schedule;
    use crate::heuristic::{run_horizon, SchedulerConfig};
    use crate::model::{DeviceId, DeviceRequest, MovementMatrix, PowerModeSet, DEFAULT_BETA_MAX};

    fn cfg(n: usize, budget: f64, horizon: usize) -> SystemConfig {
        SystemConfig {
            num_aggregators: n,
            budgets_kw: vec![budget; n],
            horizon_slots: horizon,
            slot_length_h: 0.5,
            beta_max: DEFAULT_BETA_MAX,
            movement: MovementMatrix::linear(n, 0.15),
        }
    }

    fn req(id: u32, modes: Vec<f64>, demand: f64, deadline: Slot, kappa: f64) -> DeviceRequest {
        DeviceRequest {
            id: DeviceId(id),
            arrival_slot: 0,
            deadline_slot: deadline,
            mobile: false,
            initial_energy_kwh: 0.0,
            demand_kwh: demand,
            criticality: kappa,
            power_modes_kw: PowerModeSet::new(modes),
            home: AggregatorId(0),
            source: None,
        }
    }

    #[test]
    fn single_feasible_device_has_zero_loss() {
        let s = Scenario::new("one", cfg(1, 10.0, 4), vec![req(0, vec![2.0], 2.0, 3, 1.6)]);
        let sol = solve_exact(&ExactInstance::new(s.clone())).unwrap();
        assert_eq!(sol.loss, 0.0);
        assert!(validate_schedule(&sol.decisions, &s.config, &s.devices).unwrap().all_passed());
    }

    #[test]
    fn two_devices_sharing_a_tight_budget() {
        // Each needs 2 kWh by slot 1 and the 2 kW budget delivers 1 kWh per
        // slot, so only one finishes on time; the other is 1 kWh short at
        // slot 2 and the cheaper lateness is exp(1.6).
        let s = Scenario::new(
            "pair",
            cfg(1, 2.0, 3),
            vec![req(0, vec![2.0, 4.0], 2.0, 1, 1.6), req(1, vec![2.0, 4.0], 2.0, 1, 2.0)],
        );
        let sol = solve_exact(&ExactInstance::new(s.clone())).unwrap();
        assert_eq!(sol.loss, 1.6f64.exp());
        assert!((sol.loss - 4.953032424395115).abs() < 1e-12);
        assert!(validate_schedule(&sol.decisions, &s.config, &s.devices).unwrap().all_passed());
    }

    #[test]
    fn caps_refuse_large_instances() {
        let devices = (0..5).map(|i| req(i, vec![1.0], 0.5, 2, 1.6)).collect();
        let s = Scenario::new("big", cfg(1, 10.0, 3), devices);
        assert!(matches!(solve_exact(&ExactInstance::new(s)), Err(ExactError::CapExceeded(_))));
    }

    #[test]
    fn node_budget_is_enforced() {
        let devices = (0..3).map(|i| req(i, vec![1.0, 2.0], 3.0, 4, 1.6)).collect();
        let s = Scenario::new("budget", cfg(2, 3.0, 6), devices);
        let caps = ExactCaps { node_budget: 10, ..ExactCaps::default() };
        assert!(matches!(solve_exact(&ExactInstance::with_caps(s, caps)), Err(ExactError::NodeBudget(10))));
    }

    #[test]
    fn empty_instance() {
        let s = Scenario::new("empty", cfg(1, 1.0, 3), vec![]);
        let sol = solve_exact(&ExactInstance::new(s)).unwrap();
        assert_eq!(sol.loss, 0.0);
        assert!(sol.decisions.is_empty());
    }

    #[test]
    fn never_worse_than_heuristic_with_movement() {
        let mut a = req(0, vec![2.0], 3.0, 3, 2.0);
        a.mobile = true;
        a.initial_energy_kwh = 2.0;
        let b = req(1, vec![2.0], 3.0, 3, 1.6);
        let s = Scenario::new("move", cfg(2, 2.0, 6), vec![a, b]);
        let exact = solve_exact(&ExactInstance::new(s.clone())).unwrap();
        let heur = run_horizon(&s, &SchedulerConfig::heuristic());
        assert!(exact.loss <= heur.total_loss());
        assert!(validate_schedule(&exact.decisions, &s.config, &s.devices).unwrap().all_passed());
    }
}
