//! Independent feasibility check of a decision matrix.
//!
//! This re-derives every device's location, transit progress and delivered
//! energy from the raw decisions. It shares no bookkeeping with the
//! schedulers, so a bug in their state tracking shows up here.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ScheduleError;
use crate::model::{Action, AggregatorId, DeviceId, DeviceRequest, Slot, SlotDecision, SystemConfig, ENERGY_EPS};

/// The eight constraint families of the scheduling problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Constraint {
    /// (i) served only with an own mode, at the aggregator the device is attached to, after arrival.
    #[serde(rename = "i")]
    ModeChoice,
    /// (ii) exactly one action per device and slot.
    #[serde(rename = "ii")]
    SingleState,
    /// (iii) served power at an aggregator never exceeds its budget.
    #[serde(rename = "iii")]
    Budget,
    /// (iv) a transit starts from the cluster the device is in, on a real edge, after arrival.
    #[serde(rename = "iv")]
    TransitStart,
    /// (v) no service while in transit.
    #[serde(rename = "v")]
    TransitExclusive,
    /// (vi) a transit lasts at least its delay.
    #[serde(rename = "vi")]
    MinTransit,
    /// (vii) a transit lasts at most its delay.
    #[serde(rename = "vii")]
    MaxTransit,
    /// (viii) delivered energy never exceeds demand plus movement energy.
    #[serde(rename = "viii")]
    EnergyBound,
}

impl Constraint {
    pub const ALL: [Constraint; 8] = [
        Constraint::ModeChoice,
        Constraint::SingleState,
        Constraint::Budget,
        Constraint::TransitStart,
        Constraint::TransitExclusive,
        Constraint::MinTransit,
        Constraint::MaxTransit,
        Constraint::EnergyBound,
    ];

    pub fn label(self) -> &'static str {
        ["i", "ii", "iii", "iv", "v", "vi", "vii", "viii"][self as usize]
    }

    pub fn description(self) -> &'static str {
        match self {
            Constraint::ModeChoice => "mode from own set at current aggregator",
            Constraint::SingleState => "one action per device-slot",
            Constraint::Budget => "aggregator power budget",
            Constraint::TransitStart => "transit starts at current cluster",
            Constraint::TransitExclusive => "no service while moving",
            Constraint::MinTransit => "transit lasts at least its delay",
            Constraint::MaxTransit => "transit lasts at most its delay",
            Constraint::EnergyBound => "energy bounded by demand",
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}) {}", self.label(), self.description())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub device: Option<DeviceId>,
    pub slot: Slot,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregator: Option<AggregatorId>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub constraint: Constraint,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

/// Pass/fail for every constraint, with the first violating witness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub checks: Vec<ConstraintCheck>,
}

impl FeasibilityReport {
    fn new() -> Self {
        Self {
            checks: Constraint::ALL.iter().map(|&c| ConstraintCheck { constraint: c, passed: true, witness: None }).collect(),
        }
    }

    fn fail(&mut self, c: Constraint, w: Witness) {
        let check = &mut self.checks[c as usize];
        if check.passed {
            check.passed = false;
            check.witness = Some(w);
        }
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, c: Constraint) -> &ConstraintCheck {
        &self.checks[c as usize]
    }

    pub fn failed(&self) -> impl Iterator<Item = &ConstraintCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            write!(f, "{:<6} {:<44} {}", c.constraint.label(), c.constraint.description(), if c.passed { "pass" } else { "FAIL" })?;
            if let Some(w) = &c.witness {
                write!(f, "  slot {}", w.slot)?;
                if let Some(d) = w.device {
                    write!(f, " {d}")?;
                }
                if let Some(a) = w.aggregator {
                    write!(f, " {a}")?;
                }
                write!(f, ": {}", w.detail)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

struct Transit {
    from: AggregatorId,
    to: AggregatorId,
    elapsed: usize,
    delay: usize,
}

/// Check a full decision matrix against every constraint.
///
/// Missing device-slots, unknown devices, and out-of-horizon slots are
/// structural errors; duplicated device-slots fail constraint (ii).
pub fn validate_schedule(
    decisions: &[SlotDecision],
    cfg: &SystemConfig,
    devices: &[DeviceRequest],
) -> Result<FeasibilityReport, ScheduleError> {
    let horizon = cfg.horizon_slots;
    let index: std::collections::HashMap<DeviceId, usize> =
        devices.iter().enumerate().map(|(i, d)| (d.id, i)).collect();
    let mut report = FeasibilityReport::new();
    let mut matrix: Vec<Vec<Option<Action>>> = vec![vec![None; horizon]; devices.len()];
    for d in decisions {
        let &k = index.get(&d.device).ok_or(ScheduleError::UnknownDevice(d.device))?;
        if d.slot >= horizon {
            return Err(ScheduleError::SlotOutOfRange { device: d.device, slot: d.slot });
        }
        let cell = &mut matrix[k][d.slot];
        if cell.is_some() {
            report.fail(
                Constraint::SingleState,
                Witness { device: Some(d.device), slot: d.slot, aggregator: None, detail: "more than one action".into() },
            );
        } else {
            *cell = Some(d.action);
        }
    }
    for (k, row) in matrix.iter().enumerate() {
        if let Some(t) = row.iter().position(Option::is_none) {
            return Err(ScheduleError::Missing { device: devices[k].id, slot: t });
        }
    }

    let mut load = vec![vec![0.0f64; cfg.num_aggregators]; horizon];
    for (k, dev) in devices.iter().enumerate() {
        let id = Some(dev.id);
        let w = |slot: Slot, aggregator: Option<AggregatorId>, detail: String| Witness { device: id, slot, aggregator, detail };
        let mut location = dev.home;
        let mut transit: Option<Transit> = None;
        let mut last_finished: Option<(AggregatorId, AggregatorId, Slot)> = None;
        let mut delivered = 0.0f64;
        let mut extra = 0.0f64;
        for t in 0..horizon {
            let action = matrix[k][t].expect("coverage checked above");
            if let Some(tr) = &mut transit {
                match action {
                    Action::Move { from, to } if from == tr.from && to == tr.to => {
                        tr.elapsed += 1;
                        if tr.elapsed == tr.delay {
                            location = tr.to;
                            last_finished = Some((tr.from, tr.to, t));
                            transit = None;
                        }
                    }
                    Action::Serve { aggregator, .. } => {
                        report.fail(Constraint::TransitExclusive, w(t, Some(aggregator), format!("{action} during transit {}->{}", tr.from, tr.to)));
                        location = tr.to;
                        transit = None;
                    }
                    other => {
                        report.fail(
                            Constraint::MinTransit,
                            w(t, None, format!("{other} after {} of {} transit slots", tr.elapsed, tr.delay)),
                        );
                        location = tr.to;
                        transit = None;
                    }
                }
                continue;
            }
            match action {
                Action::Idle => {}
                Action::Serve { mode, aggregator } => {
                    let level = dev.power_modes_kw.level(mode).filter(|_| mode >= 1);
                    if t < dev.arrival_slot {
                        report.fail(Constraint::ModeChoice, w(t, Some(aggregator), "served before arrival".into()));
                    } else if aggregator != location {
                        report.fail(Constraint::ModeChoice, w(t, Some(aggregator), format!("served at {aggregator} while at {location}")));
                    } else if level.is_none() {
                        report.fail(Constraint::ModeChoice, w(t, Some(aggregator), format!("mode {mode} not in the device's set")));
                    }
                    let power = level.unwrap_or(0.0);
                    if aggregator.0 < cfg.num_aggregators {
                        load[t][aggregator.0] += power;
                    }
                    let need = dev.demand_kwh + extra;
                    if delivered >= need - ENERGY_EPS {
                        report.fail(
                            Constraint::EnergyBound,
                            w(t, Some(aggregator), format!("served after {delivered:.4} of {need:.4} kWh was delivered")),
                        );
                    }
                    delivered = (delivered + power * cfg.slot_length_h).min(need);
                }
                Action::Move { from, to } => {
                    if let Some((f, g, end)) = last_finished {
                        if f == from && g == to && end + 1 == t {
                            report.fail(Constraint::MaxTransit, w(t, None, format!("transit {from}->{to} exceeds its delay")));
                            continue;
                        }
                    }
                    let known = from.0 < cfg.num_aggregators && to.0 < cfg.num_aggregators;
                    if t < dev.arrival_slot || !known || from == to || from != location {
                        report.fail(
                            Constraint::TransitStart,
                            w(t, None, format!("{action} while at {location}{}", if t < dev.arrival_slot { " before arrival" } else { "" })),
                        );
                        continue;
                    }
                    let opt = cfg.movement.option(from, to);
                    extra += opt.total_cost();
                    if opt.delay <= 1 {
                        location = to;
                        last_finished = Some((from, to, t));
                    } else {
                        transit = Some(Transit { from, to, elapsed: 1, delay: opt.delay });
                    }
                }
            }
        }
    }

    'budget: for (t, row) in load.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            if p > cfg.budgets_kw[j] + ENERGY_EPS {
                report.fail(
                    Constraint::Budget,
                    Witness {
                        device: None,
                        slot: t,
                        aggregator: Some(AggregatorId(j)),
                        detail: format!("{p} kW served against a {} kW budget", cfg.budgets_kw[j]),
                    },
                );
                break 'budget;
            }
        }
    }
    Ok(report)
}
