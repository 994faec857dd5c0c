//! Exact small-instance optimiser and the schedule validator it is judged by.

mod search;
mod validate;

use serde::{Deserialize, Serialize};

pub use search::{solve_exact, ExactCaps, ExactInstance, ExactSolution};
pub use validate::{validate_schedule, Constraint, ConstraintCheck, FeasibilityReport, Witness};

use crate::heuristic::{run_horizon, SchedulerConfig};
use crate::model::Scenario;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub scenario_id: String,
    pub heuristic: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact: Option<f64>,
    /// heuristic / exact; `None` when the exact solver refused or the exact
    /// loss is zero while the heuristic's is not.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_ratio: Option<f64>,
    pub refused: usize,
}

pub fn gap_ratio(heuristic: f64, exact: f64) -> Option<f64> {
    if exact == 0.0 {
        (heuristic == 0.0).then_some(1.0)
    } else {
        Some(heuristic / exact)
    }
}

/// Exact versus heuristic loss per instance. Refusals are recorded per row.
pub fn gap_report(instances: &[ExactInstance], sched: &SchedulerConfig) -> GapReport {
    let rows: Vec<GapRow> = instances
        .iter()
        .map(|inst| {
            let heuristic = run_horizon(&inst.scenario, sched).total_loss();
            let id = inst.scenario.id.clone();
            match solve_exact(inst) {
                Ok(sol) => GapRow { scenario_id: id, heuristic, exact: Some(sol.loss), ratio: gap_ratio(heuristic, sol.loss), error: None },
                Err(e) => GapRow { scenario_id: id, heuristic, exact: None, ratio: None, error: Some(e.to_string()) },
            }
        })
        .collect();
    let mut ratios: Vec<f64> = rows.iter().filter_map(|r| r.ratio).collect();
    ratios.sort_by(f64::total_cmp);
    let median_ratio = match ratios.len() {
        0 => None,
        n if n % 2 == 1 => Some(ratios[n / 2]),
        n => Some((ratios[n / 2 - 1] + ratios[n / 2]) / 2.0),
    };
    GapReport {
        refused: rows.iter().filter(|r| r.error.is_some()).count(),
        max_ratio: ratios.last().copied(),
        median_ratio,
        rows,
    }
}

/// Convenience for a corpus of scenarios sharing one set of caps.
pub fn instances(scenarios: impl IntoIterator<Item = Scenario>, caps: ExactCaps) -> Vec<ExactInstance> {
    scenarios.into_iter().map(|s| ExactInstance::with_caps(s, caps)).collect()
}
