//! Multi-aggregator demand-side scheduling.
//!
//! Devices with discrete power modes, deadlines and criticalities request
//! energy from aggregators with per-slot power budgets; mobile devices may
//! migrate between aggregators at a delay and energy cost. The crate provides
//! the loss model, an online priority scheduler, earliest-deadline and
//! highest-demand baselines, an exact solver for small instances, a schedule
//! validator, scenario generation and ingestion, and experiment harnesses.

pub mod baselines;
pub mod engine;
pub mod error;
pub mod exact;
pub mod heuristic;
pub mod model;
pub mod priority;
pub mod utility;
pub mod workload;

pub use engine::{replay, run, RunOptions, RunResult, SchedulerId};
pub use error::{EngineError, ExactError, ModelError, ScheduleError, WorkloadError};
pub use exact::{solve_exact, validate_schedule, ExactCaps, ExactInstance, FeasibilityReport};
pub use heuristic::{run_horizon, SchedulerConfig};
pub use model::{
    Action, AggregatorId, DeviceId, DeviceRequest, DeviceState, MoveOption, MovementMatrix, PowerModeSet, Scenario, Slot,
    SlotDecision, SystemConfig,
};
pub use utility::LossBreakdown;
pub use workload::{generate, ingest_sessions, micro_instance, GenSpec, LoadClass};
