//! Domain types for the two-tier aggregator/device system.
//!
//! Everything here is plain data plus load-time validation. Scheduling logic
//! lives in [`crate::heuristic`], [`crate::baselines`] and [`crate::exact`];
//! loss accounting lives in [`crate::utility`].

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Discrete time slot index, `0..horizon`.
pub type Slot = usize;

/// Current version of the scenario and result documents.
pub const SCHEMA_VERSION: u32 = 1;

/// Default prohibitive penalty for moving a stationary device.
pub const DEFAULT_BETA_MAX: f64 = 1e9;

/// Energy comparisons tolerate this much floating-point slack (kWh / kW).
pub const ENERGY_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(pub u32);

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AggregatorId(pub usize);

impl AggregatorId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for AggregatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

/// Delay and per-slot energy cost of moving between two aggregators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveOption {
    #[serde(rename = "delay_slots")]
    pub delay: usize,
    #[serde(rename = "cost_kwh_per_slot")]
    pub cost: f64,
}

impl MoveOption {
    pub const STAY: MoveOption = MoveOption { delay: 0, cost: 0.0 };

    /// Energy spent over the whole transit.
    pub fn total_cost(&self) -> f64 {
        self.delay as f64 * self.cost
    }
}

/// Square matrix of movement options for every ordered aggregator pair.
///
/// Serialized as a row-major list of rows. Shape is checked on load; the
/// value rules (zero diagonal, positive delays) are reported by
/// [`validate_config`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<MoveOption>>", into = "Vec<Vec<MoveOption>>")]
pub struct MovementMatrix {
    size: usize,
    entries: Vec<MoveOption>,
}

impl MovementMatrix {
    /// Build from rows; every row must have exactly `rows.len()` entries.
    pub fn from_rows(rows: Vec<Vec<MoveOption>>) -> Result<Self, ModelError> {
        let size = rows.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != size) {
            return Err(ModelError::MatrixShape { row: bad, expected: size, found: rows[bad].len() });
        }
        Ok(Self { size, entries: rows.into_iter().flatten().collect() })
    }

    /// Aggregators on a line: moving `k` positions takes `k` slots at `cost` kWh per slot.
    pub fn linear(size: usize, cost: f64) -> Self {
        let mut entries = Vec::with_capacity(size * size);
        for from in 0..size {
            for to in 0..size {
                entries.push(if from == to {
                    MoveOption::STAY
                } else {
                    MoveOption { delay: from.abs_diff(to), cost }
                });
            }
        }
        Self { size, entries }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, from: AggregatorId, to: AggregatorId) -> Result<MoveOption, ModelError> {
        for a in [from, to] {
            if a.0 >= self.size {
                return Err(ModelError::UnknownAggregator(a));
            }
        }
        Ok(self.entries[from.0 * self.size + to.0])
    }

    /// Unchecked lookup for callers that already validated the ids.
    pub(crate) fn option(&self, from: AggregatorId, to: AggregatorId) -> MoveOption {
        self.entries[from.0 * self.size + to.0]
    }

    pub fn rows(&self) -> Vec<Vec<MoveOption>> {
        self.entries.chunks(self.size.max(1)).take(self.size).map(<[_]>::to_vec).collect()
    }
}

impl TryFrom<Vec<Vec<MoveOption>>> for MovementMatrix {
    type Error = ModelError;
    fn try_from(rows: Vec<Vec<MoveOption>>) -> Result<Self, Self::Error> {
        Self::from_rows(rows)
    }
}

impl From<MovementMatrix> for Vec<Vec<MoveOption>> {
    fn from(m: MovementMatrix) -> Self {
        m.rows()
    }
}

/// Total energy (kWh) a device spends moving `from -> to`: delay times per-slot cost.
pub fn movement_total_cost(
    mm: &MovementMatrix,
    from: AggregatorId,
    to: AggregatorId,
) -> Result<f64, ModelError> {
    Ok(mm.get(from, to)?.total_cost())
}

/// Non-zero power levels of a device in kW. Mode 0 (0 kW) is implicit, so
/// mode `i` for `i >= 1` draws `levels()[i - 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PowerModeSet(Vec<f64>);

impl PowerModeSet {
    pub fn new(levels: Vec<f64>) -> Self {
        Self(levels)
    }

    pub fn levels(&self) -> &[f64] {
        &self.0
    }

    /// Number of non-zero modes.
    pub fn count(&self) -> usize {
        self.0.len()
    }

    /// Power of mode `i`; mode 0 is 0 kW. `None` when out of range.
    pub fn level(&self, mode: usize) -> Option<f64> {
        match mode {
            0 => Some(0.0),
            i => self.0.get(i - 1).copied(),
        }
    }

    pub fn lowest(&self) -> f64 {
        self.0.first().copied().unwrap_or(0.0)
    }

    pub fn highest(&self) -> f64 {
        self.0.last().copied().unwrap_or(0.0)
    }

    /// Highest mode index whose power fits in `budget` kW.
    pub fn best_within(&self, budget: f64) -> Option<usize> {
        self.0.iter().rposition(|&p| p <= budget + ENERGY_EPS).map(|i| i + 1)
    }

    pub fn is_strictly_increasing(&self) -> bool {
        let mut prev = 0.0;
        for &p in &self.0 {
            if !(p > prev) || !p.is_finite() {
                return false;
            }
            prev = p;
        }
        true
    }
}

/// System-wide parameters: aggregators, their budgets, and time discretization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub num_aggregators: usize,
    /// Per-slot power budget of each aggregator (kW).
    pub budgets_kw: Vec<f64>,
    pub horizon_slots: usize,
    /// Slot length in hours.
    pub slot_length_h: f64,
    #[serde(default = "default_beta_max")]
    pub beta_max: f64,
    pub movement: MovementMatrix,
}

fn default_beta_max() -> f64 {
    DEFAULT_BETA_MAX
}

impl SystemConfig {
    pub fn budget(&self, a: AggregatorId) -> f64 {
        self.budgets_kw[a.0]
    }

    pub fn aggregators(&self) -> impl Iterator<Item = AggregatorId> {
        (0..self.num_aggregators).map(AggregatorId)
    }
}

/// One energy request from a device.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceRequest {
    pub id: DeviceId,
    pub arrival_slot: Slot,
    pub deadline_slot: Slot,
    pub mobile: bool,
    pub initial_energy_kwh: f64,
    pub demand_kwh: f64,
    pub criticality: f64,
    pub power_modes_kw: PowerModeSet,
    pub home: AggregatorId,
    /// Physical device this request belongs to (periodic devices issue several requests).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<u32>,
}

impl DeviceRequest {
    /// Battery capacity: initial charge plus requested energy.
    pub fn total_energy(&self) -> f64 {
        self.initial_energy_kwh + self.demand_kwh
    }

    /// Mobility flag as 0/1.
    pub fn mobility(&self) -> f64 {
        if self.mobile {
            1.0
        } else {
            0.0
        }
    }

    /// Most energy the device can take between arrival and deadline.
    pub fn max_deliverable(&self, slot_length_h: f64) -> f64 {
        self.power_modes_kw.highest()
            * slot_length_h
            * self.deadline_slot.saturating_sub(self.arrival_slot) as f64
    }
}

/// Where a device is during a slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    At(AggregatorId),
    InTransit { from: AggregatorId, to: AggregatorId, remaining: usize },
}

/// The single action a device takes in a slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Idle,
    /// Draw power mode `mode` (1-based) from `aggregator`.
    Serve { mode: usize, aggregator: AggregatorId },
    /// Spend this slot in transit on the edge `from -> to`.
    Move { from: AggregatorId, to: AggregatorId },
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Idle => f.write_str("idle"),
            Action::Serve { mode, aggregator } => write!(f, "serve mode {mode} at {aggregator}"),
            Action::Move { from, to } => write!(f, "move {from}->{to}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotDecision {
    pub device: DeviceId,
    pub slot: Slot,
    #[serde(flatten)]
    pub action: Action,
}

/// Runtime state of one request, owned by whichever scheduler advances it.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceState {
    pub request: DeviceRequest,
    /// Energy delivered so far (kWh), capped at [`DeviceState::need`].
    pub progress: f64,
    pub location: Location,
    /// Energy spent moving, which the grid has to re-supply.
    pub extra_demand: f64,
    pub loss: crate::utility::LossBreakdown,
    pub history: Vec<Action>,
}

impl DeviceState {
    pub fn new(request: DeviceRequest) -> Self {
        let home = request.home;
        Self {
            request,
            progress: 0.0,
            location: Location::At(home),
            extra_demand: 0.0,
            loss: Default::default(),
            history: Vec::new(),
        }
    }

    pub fn id(&self) -> DeviceId {
        self.request.id
    }

    /// Demand including energy spent on movement.
    pub fn need(&self) -> f64 {
        self.request.demand_kwh + self.extra_demand
    }

    pub fn deficit(&self) -> f64 {
        (self.need() - self.progress).max(0.0)
    }

    pub fn is_complete(&self) -> bool {
        self.progress >= self.need()
    }

    pub fn is_active(&self, t: Slot) -> bool {
        t >= self.request.arrival_slot
    }

    pub fn cluster(&self) -> Option<AggregatorId> {
        match self.location {
            Location::At(a) => Some(a),
            Location::InTransit { .. } => None,
        }
    }

    /// Energy on board that can pay for a move.
    pub fn available_energy(&self) -> f64 {
        self.request.initial_energy_kwh + self.progress - self.extra_demand
    }

    /// Delivered energy minus movement-attributed loss, floored at minus the initial charge.
    pub fn net_utility(&self) -> f64 {
        (self.progress - 2.0 * self.loss.mobility).max(-self.request.initial_energy_kwh)
    }
}

/// A scenario document: system configuration and device requests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub id: String,
    pub config: SystemConfig,
    pub devices: Vec<DeviceRequest>,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

impl Scenario {
    pub fn new(id: impl Into<String>, config: SystemConfig, devices: Vec<DeviceRequest>) -> Self {
        Self { schema_version: SCHEMA_VERSION, id: id.into(), config, devices }
    }

    pub fn from_reader(r: impl Read) -> Result<Self, ModelError> {
        let s: Scenario = serde_json::from_reader(r)?;
        if s.schema_version != SCHEMA_VERSION {
            return Err(ModelError::SchemaVersion(s.schema_version));
        }
        Ok(s)
    }

    pub fn to_writer(&self, w: impl Write) -> Result<(), ModelError> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_config(&self.config, &self.devices)
    }

    pub fn device_index(&self, id: DeviceId) -> Option<usize> {
        self.devices.iter().position(|d| d.id == id)
    }
}

/// One broken invariant found at load time.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub subject: String,
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(subject: impl Into<String>, field: &str, rule: impl Into<String>) -> Self {
        Self { subject: subject.into(), field: field.to_string(), rule: rule.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.subject, self.field, self.rule)
    }
}

/// Check every configuration and request invariant. Returns an empty list iff all hold.
pub fn validate_config(cfg: &SystemConfig, devices: &[DeviceRequest]) -> Vec<Violation> {
    let mut out = Vec::new();
    let sys = "config";
    if cfg.num_aggregators < 1 {
        out.push(Violation::new(sys, "num_aggregators", "at least one aggregator"));
    }
    if cfg.budgets_kw.len() != cfg.num_aggregators {
        out.push(Violation::new(
            sys,
            "budgets_kw",
            format!("{} budgets for {} aggregators", cfg.budgets_kw.len(), cfg.num_aggregators),
        ));
    }
    for (j, &b) in cfg.budgets_kw.iter().enumerate() {
        if !(b > 0.0) || !b.is_finite() {
            out.push(Violation::new(sys, "budgets_kw", format!("budget of a{j} must be > 0")));
        }
    }
    if cfg.horizon_slots < 1 {
        out.push(Violation::new(sys, "horizon_slots", "at least one slot"));
    }
    if !(cfg.slot_length_h > 0.0) || !cfg.slot_length_h.is_finite() {
        out.push(Violation::new(sys, "slot_length_h", "slot length must be > 0"));
    }
    if !(cfg.beta_max > 0.0) {
        out.push(Violation::new(sys, "beta_max", "penalty constant must be > 0"));
    }
    let mm = &cfg.movement;
    if mm.size() != cfg.num_aggregators {
        out.push(Violation::new(
            sys,
            "movement",
            format!("matrix is {0}x{0}, expected {1}x{1}", mm.size(), cfg.num_aggregators),
        ));
    } else {
        for from in cfg.aggregators() {
            for to in cfg.aggregators() {
                let o = mm.option(from, to);
                if from == to {
                    if o != MoveOption::STAY {
                        out.push(Violation::new(sys, "movement", format!("diagonal {from}->{to} must be (0, 0)")));
                    }
                } else if o.delay < 1 || !(o.cost >= 0.0) || !o.cost.is_finite() {
                    out.push(Violation::new(
                        sys,
                        "movement",
                        format!("{from}->{to} needs delay >= 1 and cost >= 0"),
                    ));
                }
            }
        }
    }

    let mut seen = std::collections::BTreeSet::new();
    for d in devices {
        let who = format!("device {}", d.id.0);
        if !seen.insert(d.id) {
            out.push(Violation::new(&who, "id", "duplicate device id"));
        }
        if d.arrival_slot >= d.deadline_slot {
            out.push(Violation::new(&who, "arrival_slot", "arrival must precede the deadline"));
        }
        if d.deadline_slot > cfg.horizon_slots {
            out.push(Violation::new(&who, "deadline_slot", "deadline must lie within the horizon"));
        }
        if !(d.demand_kwh > 0.0) || !d.demand_kwh.is_finite() {
            out.push(Violation::new(&who, "demand_kwh", "demand must be > 0"));
        }
        if !(d.initial_energy_kwh >= 0.0) || !d.initial_energy_kwh.is_finite() {
            out.push(Violation::new(&who, "initial_energy_kwh", "initial energy must be >= 0"));
        }
        if !(d.criticality > 0.0) || !d.criticality.is_finite() {
            out.push(Violation::new(&who, "criticality", "criticality must be > 0"));
        }
        if d.home.0 >= cfg.num_aggregators {
            out.push(Violation::new(&who, "home", format!("unknown aggregator {}", d.home)));
        }
        if d.power_modes_kw.count() == 0 {
            out.push(Violation::new(&who, "power_modes_kw", "at least one non-zero mode"));
        } else if !d.power_modes_kw.is_strictly_increasing() {
            out.push(Violation::new(&who, "power_modes_kw", "modes must be strictly increasing above 0 kW"));
        } else if d.demand_kwh > d.max_deliverable(cfg.slot_length_h) + ENERGY_EPS {
            out.push(Violation::new(
                &who,
                "demand_kwh",
                format!(
                    "demand {} kWh exceeds {} kWh deliverable at top mode before the deadline",
                    d.demand_kwh,
                    d.max_deliverable(cfg.slot_length_h)
                ),
            ));
        }
    }
    out
}
