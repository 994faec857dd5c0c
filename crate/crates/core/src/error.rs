use thiserror::Error;

use crate::exact::FeasibilityReport;
use crate::model::{AggregatorId, DeviceId, Slot, Violation};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown aggregator {0}")]
    UnknownAggregator(AggregatorId),
    #[error("movement matrix row {row} has {found} entries, expected {expected}")]
    MatrixShape { row: usize, expected: usize, found: usize },
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
    #[error("{device} at slot {slot}: {reason}")]
    InvalidAction { device: DeviceId, slot: Slot, reason: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// A schedule that cannot even be checked: it does not cover the decision matrix.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("no decision for {device} at slot {slot}")]
    Missing { device: DeviceId, slot: Slot },
    #[error("decision for unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error("decision for {device} at slot {slot} lies outside the horizon")]
    SlotOutOfRange { device: DeviceId, slot: Slot },
}

#[derive(Debug, Error)]
pub enum ExactError {
    #[error("instance exceeds enumeration caps: {0}")]
    CapExceeded(String),
    #[error("search exceeded the node budget of {0} nodes")]
    NodeBudget(u64),
    #[error("invalid scenario: {}", join(.0))]
    InvalidScenario(Vec<Violation>),
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("cluster a{cluster}: {reason}")]
    Infeasible { cluster: usize, reason: String },
    #[error("invalid generation spec: {0}")]
    Spec(String),
    #[error("session input: {0}")]
    Csv(#[from] csv::Error),
    #[error("session record {record}: {reason}")]
    Record { record: usize, reason: String },
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown scheduler '{0}' (expected heuristic, edf or hp)")]
    UnknownScheduler(String),
    #[error("invalid scenario: {}", join(.0))]
    InvalidScenario(Vec<Violation>),
    #[error("schedule failed validation: {0}")]
    Infeasible(Box<FeasibilityReport>),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
