//! Accumulated utility and the per-slot utility-loss function.
//!
//! A device's loss in slot `t` has three parts: the deadline term (deficit
//! scaled by `exp(criticality * lateness)`), the movement term (per-slot
//! movement cost, counted twice because the grid re-supplies it), and a
//! prohibitive penalty whenever a stationary device is moved between clusters.
//!
//! [`advance`] is the single place where a device's state moves forward by one
//! slot. Every scheduler and the replay path go through it, so losses are
//! bit-identical no matter who produced the decisions.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::model::{
    Action, AggregatorId, DeviceState, Location, MovementMatrix, PowerModeSet, Slot, SlotDecision, SystemConfig,
};

/// Loss components for one slot, or summed over many.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub deadline: f64,
    pub mobility: f64,
    pub stationary: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(deadline: f64, mobility: f64, stationary: f64) -> Self {
        Self { deadline, mobility, stationary, total: deadline + 2.0 * mobility + stationary }
    }

    /// Add one slot's loss. `total` is accumulated from the slot totals, not recomputed.
    pub fn accumulate(&mut self, slot: &LossBreakdown) {
        self.deadline += slot.deadline;
        self.mobility += slot.mobility;
        self.stationary += slot.stationary;
        self.total += slot.total;
    }
}

/// Energy (kWh) delivered by the served slots of `history` up to and including `up_to`.
pub fn accumulated_utility(history: &[SlotDecision], up_to: Slot, modes: &PowerModeSet, slot_length_h: f64) -> f64 {
    history
        .iter()
        .filter(|d| d.slot <= up_to)
        .map(|d| match d.action {
            Action::Serve { mode, .. } => modes.level(mode).unwrap_or(0.0) * slot_length_h,
            _ => 0.0,
        })
        .sum()
}

/// Deadline-miss loss at slot `t`: zero on time or when the demand is met,
/// otherwise `(demand - progress) * exp(criticality * (t - deadline))`,
/// clamped at `beta_max`.
pub fn deadline_loss(progress: f64, demand: f64, t: Slot, deadline: Slot, criticality: f64, beta_max: f64) -> f64 {
    if t <= deadline || progress >= demand {
        return 0.0;
    }
    let late = (t - deadline) as f64;
    let loss = (demand - progress) * (criticality * late).exp();
    if loss.is_finite() {
        loss.min(beta_max)
    } else {
        beta_max
    }
}

/// Per-slot movement loss: the edge's per-slot cost while moving, else 0.
pub fn mobility_loss(mm: &MovementMatrix, action: &Action) -> f64 {
    match *action {
        Action::Move { from, to } => mm.get(from, to).map(|o| o.cost).unwrap_or(0.0),
        _ => 0.0,
    }
}

/// `beta_max` when a stationary device changes cluster, else 0.
pub fn stationary_penalty(mobile: bool, from: AggregatorId, to: AggregatorId, beta_max: f64) -> f64 {
    let m = if mobile { 1.0 } else { 0.0 };
    let moved = if from == to { 0.0 } else { 1.0 };
    (1.0 - m) * moved * beta_max
}

/// Loss of one slot, evaluated on the state after `action` was applied.
pub fn slot_loss(state: &DeviceState, action: &Action, t: Slot, cfg: &SystemConfig) -> LossBreakdown {
    let req = &state.request;
    if !state.is_active(t) {
        return LossBreakdown::default();
    }
    let deadline = deadline_loss(state.progress, state.need(), t, req.deadline_slot, req.criticality, cfg.beta_max);
    let mobility = mobility_loss(&cfg.movement, action);
    let stationary = match *action {
        Action::Move { from, to } => stationary_penalty(req.mobile, from, to, cfg.beta_max),
        _ => 0.0,
    };
    LossBreakdown::new(deadline, mobility, stationary)
}

/// Apply `action` to `state` for slot `t` and return the slot's loss.
///
/// Service raises progress by one slot of energy, capped at the remaining
/// need. The first slot of a move appends the whole transit cost to
/// `extra_demand`; the device reaches the target after `delay` move slots.
pub fn advance(state: &mut DeviceState, action: Action, t: Slot, cfg: &SystemConfig) -> Result<LossBreakdown, ModelError> {
    let invalid = |reason: String| ModelError::InvalidAction { device: state.request.id, slot: t, reason };
    if !state.is_active(t) && action != Action::Idle {
        return Err(invalid(format!("{action} before arrival")));
    }
    match action {
        Action::Idle => {
            if let Location::InTransit { .. } = state.location {
                return Err(invalid("idle during transit".into()));
            }
        }
        Action::Serve { mode, aggregator } => {
            if state.location != Location::At(aggregator) {
                return Err(invalid(format!("served at {aggregator} while at {:?}", state.location)));
            }
            let power = match (mode, state.request.power_modes_kw.level(mode)) {
                (1.., Some(p)) => p,
                _ => return Err(invalid(format!("mode {mode} not available"))),
            };
            let energy = power * cfg.slot_length_h;
            let need = state.need();
            if state.progress >= need {
                return Err(invalid("served after demand was met".into()));
            }
            if energy >= need - state.progress {
                state.progress = need;
            } else {
                state.progress += energy;
            }
        }
        Action::Move { from, to } => {
            let opt = cfg.movement.get(from, to)?;
            match state.location {
                Location::At(here) if here == from && from != to => {
                    state.extra_demand += opt.total_cost();
                    state.location = Location::InTransit { from, to, remaining: opt.delay };
                }
                Location::InTransit { from: f, to: g, .. } if f == from && g == to => {}
                loc => return Err(invalid(format!("{action} from {loc:?}"))),
            }
            if let Location::InTransit { remaining, .. } = &mut state.location {
                *remaining -= 1;
                if *remaining == 0 {
                    state.location = Location::At(to);
                }
            }
        }
    }
    let loss = slot_loss(state, &action, t, cfg);
    state.loss.accumulate(&loss);
    state.history.push(action);
    Ok(loss)
}
