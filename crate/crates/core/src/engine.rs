//! Horizon runs, replay, experiment harnesses and result documents.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines;
use crate::error::{EngineError, ModelError};
use crate::exact::{solve_exact, validate_schedule, ExactCaps, ExactInstance};
use crate::heuristic::{run_horizon, HorizonRun, SchedulerConfig};
use crate::model::{Action, DeviceId, DeviceState, Scenario, SlotDecision, SCHEMA_VERSION};
use crate::utility::advance;
use crate::workload::{generate, GenSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerId {
    Heuristic,
    Edf,
    Hp,
    /// The exact solver; only small instances are accepted.
    Exact,
}

impl SchedulerId {
    /// The online schedulers.
    pub const ALL: [SchedulerId; 3] = [SchedulerId::Heuristic, SchedulerId::Edf, SchedulerId::Hp];

    /// Default configuration: movement on for the heuristic and the exact
    /// solver, off for the baselines.
    pub fn config(self) -> SchedulerConfig {
        match self {
            SchedulerId::Heuristic | SchedulerId::Exact => SchedulerConfig::heuristic(),
            SchedulerId::Edf => baselines::edf(),
            SchedulerId::Hp => baselines::highest_power(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SchedulerId::Heuristic => "heuristic",
            SchedulerId::Edf => "edf",
            SchedulerId::Hp => "hp",
            SchedulerId::Exact => "exact",
        }
    }
}

impl fmt::Display for SchedulerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for SchedulerId {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "heuristic" => Ok(SchedulerId::Heuristic),
            "edf" => Ok(SchedulerId::Edf),
            "hp" => Ok(SchedulerId::Hp),
            "exact" => Ok(SchedulerId::Exact),
            other => Err(EngineError::UnknownScheduler(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub scheduler: SchedulerId,
    /// Overrides the scheduler's default movement setting.
    pub mobility: Option<bool>,
    /// Schedule aggregators of a slot on the worker pool.
    pub parallel: bool,
}

impl RunOptions {
    pub fn new(scheduler: SchedulerId) -> Self {
        Self { scheduler, mobility: None, parallel: false }
    }

    pub fn config(&self) -> SchedulerConfig {
        let mut cfg = self.scheduler.config();
        if let Some(m) = self.mobility {
            cfg = cfg.set_mobility_enabled(m);
        }
        cfg.parallel = self.parallel;
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceLedger {
    pub device: DeviceId,
    pub deadline_loss: f64,
    pub mobility_loss: f64,
    pub stationary_penalty: f64,
    pub total_loss: f64,
    pub delivered_kwh: f64,
    pub need_kwh: f64,
    pub net_utility_kwh: f64,
}

impl From<&DeviceState> for DeviceLedger {
    fn from(s: &DeviceState) -> Self {
        Self {
            device: s.id(),
            deadline_loss: s.loss.deadline,
            mobility_loss: s.loss.mobility,
            stationary_penalty: s.loss.stationary,
            total_loss: s.loss.total,
            delivered_kwh: s.progress,
            need_kwh: s.need(),
            net_utility_kwh: s.net_utility(),
        }
    }
}

/// Result document of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub scenario_id: String,
    pub scheduler: SchedulerId,
    pub mobility: bool,
    pub total_loss: f64,
    pub moves: usize,
    pub devices: Vec<DeviceLedger>,
    /// Committed power over budget, per slot then aggregator.
    pub utilization: Vec<Vec<f64>>,
    /// Wall time of each slot (ns). Machine dependent; see [`RunResult::without_timing`].
    pub slot_wall_ns: Vec<u64>,
    /// Decision matrix, ordered by device then slot.
    pub decisions: Vec<SlotDecision>,
}

impl RunResult {
    /// Copy with the timing trace cleared, for byte comparisons and golden files.
    pub fn without_timing(&self) -> Self {
        Self { slot_wall_ns: Vec::new(), ..self.clone() }
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat per-device table for plotting.
    pub fn write_ledger_csv(&self, w: impl Write) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for d in &self.devices {
            out.serialize(d)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Flat per-slot aggregator utilization table.
    pub fn write_utilization_csv(&self, w: impl Write) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["slot", "aggregator", "utilization"])?;
        for (t, row) in self.utilization.iter().enumerate() {
            for (j, u) in row.iter().enumerate() {
                out.write_record([t.to_string(), j.to_string(), u.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn median_slot_ns(&self) -> Option<u64> {
        let mut v = self.slot_wall_ns.clone();
        v.sort_unstable();
        (!v.is_empty()).then(|| v[v.len() / 2])
    }
}

fn result_of(scenario: &Scenario, opts: &RunOptions, cfg: &SchedulerConfig, run: HorizonRun) -> RunResult {
    let budgets = &scenario.config.budgets_kw;
    RunResult {
        schema_version: SCHEMA_VERSION,
        scenario_id: scenario.id.clone(),
        scheduler: opts.scheduler,
        mobility: cfg.mobility,
        total_loss: run.total_loss(),
        moves: run.moves,
        devices: run.states.iter().map(DeviceLedger::from).collect(),
        utilization: run.committed_kw.iter().map(|row| row.iter().zip(budgets).map(|(c, b)| c / b).collect()).collect(),
        slot_wall_ns: run.slot_wall_ns.clone(),
        decisions: run.decisions(),
    }
}

/// Run one scheduler over a whole scenario.
///
/// The scenario is validated first and the produced decision matrix must
/// pass [`validate_schedule`]; anything else is an error, never a result.
pub fn run(scenario: &Scenario, opts: &RunOptions) -> Result<RunResult, EngineError> {
    run_with_caps(scenario, opts, &ExactCaps::default())
}

/// [`run`] with explicit enumeration caps for the exact solver. The exact
/// solver always considers movement.
pub fn run_with_caps(scenario: &Scenario, opts: &RunOptions, caps: &ExactCaps) -> Result<RunResult, EngineError> {
    let violations = scenario.validate();
    if !violations.is_empty() {
        return Err(EngineError::InvalidScenario(violations));
    }
    let mut cfg = opts.config();
    let horizon = match opts.scheduler {
        SchedulerId::Exact => {
            cfg.mobility = true;
            exact_horizon(scenario, caps)?
        }
        _ => run_horizon(scenario, &cfg),
    };
    let result = result_of(scenario, opts, &cfg, horizon);
    let report = validate_schedule(&result.decisions, &scenario.config, &scenario.devices)?;
    if !report.all_passed() {
        return Err(EngineError::Infeasible(Box::new(report)));
    }
    Ok(result)
}

/// Solve exactly and present the optimum like a horizon run. The wall-time
/// trace holds the whole solve as a single entry.
pub fn exact_horizon(scenario: &Scenario, caps: &ExactCaps) -> Result<HorizonRun, EngineError> {
    let started = std::time::Instant::now();
    let sol = solve_exact(&ExactInstance::with_caps(scenario.clone(), *caps))?;
    let elapsed = started.elapsed().as_nanos() as u64;
    let states = replay_states(scenario, &sol.decisions)?;
    let cfg = &scenario.config;
    let mut committed_kw = vec![vec![0.0; cfg.num_aggregators]; cfg.horizon_slots];
    let mut moves = 0;
    for s in &states {
        for (t, a) in s.history.iter().enumerate() {
            match *a {
                Action::Serve { mode, aggregator } => {
                    committed_kw[t][aggregator.0] += s.request.power_modes_kw.level(mode).unwrap_or(0.0);
                }
                Action::Move { .. } if t == 0 || !matches!(s.history[t - 1], Action::Move { .. }) => moves += 1,
                _ => {}
            }
        }
    }
    Ok(HorizonRun { states, committed_kw, slot_wall_ns: vec![elapsed], moves })
}

/// Device states after re-simulating a decision matrix.
pub fn replay_states(scenario: &Scenario, decisions: &[SlotDecision]) -> Result<Vec<DeviceState>, EngineError> {
    let cfg = &scenario.config;
    let mut matrix: Vec<Vec<Option<Action>>> = vec![vec![None; cfg.horizon_slots]; scenario.devices.len()];
    for d in decisions {
        let k = scenario.device_index(d.device).ok_or(crate::error::ScheduleError::UnknownDevice(d.device))?;
        let cell = matrix[k]
            .get_mut(d.slot)
            .ok_or(crate::error::ScheduleError::SlotOutOfRange { device: d.device, slot: d.slot })?;
        *cell = Some(d.action);
    }
    let mut states = Vec::with_capacity(matrix.len());
    for (req, row) in scenario.devices.iter().zip(&matrix) {
        let mut s = DeviceState::new(req.clone());
        for (t, a) in row.iter().enumerate() {
            let a = a.ok_or(crate::error::ScheduleError::Missing { device: req.id, slot: t })?;
            advance(&mut s, a, t, cfg)?;
        }
        states.push(s);
    }
    Ok(states)
}

/// Re-simulate a decision matrix through the loss model and return its total loss.
///
/// Per-device losses are summed in device order, as in a run, so a run's
/// own decisions reproduce its total bit for bit.
pub fn replay(scenario: &Scenario, decisions: &[SlotDecision]) -> Result<f64, EngineError> {
    Ok(replay_states(scenario, decisions)?.iter().map(|s| s.loss.total).sum())
}

/// Worker pool sized by `GRIDFLEX_THREADS`, defaulting to rayon's choice.
pub fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var("GRIDFLEX_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).unwrap_or(0);
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool")
}

/// Summary statistics of a sample, with the count of runs that failed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub failed: usize,
    pub mean: f64,
    /// Sample variance (n - 1 denominator); zero for fewer than two values.
    pub variance: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Stats {
    pub fn of(values: &[f64], failed: usize) -> Self {
        if values.is_empty() {
            return Self { failed, ..Self::default() };
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Self {
            n,
            failed,
            mean,
            variance,
            min: v[0],
            q25: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q75: quantile(&v, 0.75),
            max: v[n - 1],
        }
    }
}

/// Loss with movement enabled minus loss without, for one generated sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaSample {
    pub scenario_id: String,
    pub num_devices: usize,
    pub mobile_fraction: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub with_mobility: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub without_mobility: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub num_devices: usize,
    /// `None` for the group pooling every mobile fraction.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mobile_fraction: Option<f64>,
    pub stats: Stats,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub schema_version: u32,
    pub groups: Vec<GroupSummary>,
    pub samples: Vec<DeltaSample>,
}

impl ExperimentSummary {
    pub fn group(&self, num_devices: usize, mobile_fraction: Option<f64>) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.num_devices == num_devices && g.mobile_fraction == mobile_fraction)
    }

    /// Plot-ready table: one row per sample.
    pub fn write_samples_csv(&self, w: impl Write) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["scenario_id", "num_devices", "mobile_fraction", "seed", "with_mobility", "without_mobility", "delta", "error"])?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for s in &self.samples {
            out.write_record([
                s.scenario_id.clone(),
                s.num_devices.to_string(),
                s.mobile_fraction.to_string(),
                s.seed.to_string(),
                opt(s.with_mobility),
                opt(s.without_mobility),
                opt(s.delta),
                s.error.clone().unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn delta_sample(spec: &GenSpec) -> DeltaSample {
    let mut sample = DeltaSample {
        scenario_id: String::new(),
        num_devices: spec.num_devices,
        mobile_fraction: spec.mobile_fraction,
        seed: spec.seed,
        with_mobility: None,
        without_mobility: None,
        delta: None,
        error: None,
    };
    let outcome = generate(spec).map_err(EngineError::from).and_then(|scenario| {
        sample.scenario_id = scenario.id.clone();
        let loss = |m: bool| {
            run(&scenario, &RunOptions { scheduler: SchedulerId::Heuristic, mobility: Some(m), parallel: false }).map(|r| r.total_loss)
        };
        Ok((loss(true)?, loss(false)?))
    });
    match outcome {
        Ok((with, without)) => {
            sample.with_mobility = Some(with);
            sample.without_mobility = Some(without);
            sample.delta = Some(with - without);
        }
        Err(e) => sample.error = Some(e.to_string()),
    }
    sample
}

/// Run every spec with movement on and off and summarise the loss deltas
/// per device count and per (device count, mobile fraction).
///
/// Samples run on the worker pool; results keep input order. Failed samples
/// are kept and counted, never dropped.
pub fn mobility_delta_experiment(specs: &[GenSpec]) -> ExperimentSummary {
    let samples: Vec<DeltaSample> = thread_pool().install(|| specs.par_iter().map(delta_sample).collect());
    let mut keys: Vec<(usize, Option<u64>)> = Vec::new();
    for s in &samples {
        for k in [(s.num_devices, None), (s.num_devices, Some(s.mobile_fraction.to_bits()))] {
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
    }
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.map(f64::from_bits).partial_cmp(&b.1.map(f64::from_bits)).expect("finite")));
    let groups = keys
        .into_iter()
        .map(|(n, frac)| {
            let members: Vec<&DeltaSample> = samples
                .iter()
                .filter(|s| s.num_devices == n && frac.is_none_or(|f| s.mobile_fraction.to_bits() == f))
                .collect();
            let deltas: Vec<f64> = members.iter().filter_map(|s| s.delta).collect();
            GroupSummary {
                num_devices: n,
                mobile_fraction: frac.map(f64::from_bits),
                stats: Stats::of(&deltas, members.len() - deltas.len()),
            }
        })
        .collect();
    ExperimentSummary { schema_version: SCHEMA_VERSION, groups, samples }
}

/// Relative improvement of the heuristic over a baseline, in percent.
/// `None` when the baseline loss is zero.
pub fn improvement(heuristic: f64, baseline: f64) -> Option<f64> {
    (baseline != 0.0).then(|| (baseline - heuristic) / baseline * 100.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub baseline: SchedulerId,
    pub heuristic_loss: f64,
    pub baseline_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub percent: Option<f64>,
}

impl fmt::Display for ImprovementRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<10} heuristic {:>14.2}  baseline {:>14.2}  ", self.baseline, self.heuristic_loss, self.baseline_loss)?;
        match self.percent {
            Some(p) => write!(f, "{p:.2}% better"),
            None if self.heuristic_loss == 0.0 => f.write_str("n/a (both zero)"),
            None => f.write_str("n/a"),
        }
    }
}

/// Improvement of the heuristic result over every other scheduler's result.
pub fn improvement_report(results: &[RunResult]) -> Vec<ImprovementRow> {
    let Some(h) = results.iter().find(|r| r.scheduler == SchedulerId::Heuristic) else {
        return Vec::new();
    };
    results
        .iter()
        .filter(|r| r.scheduler != SchedulerId::Heuristic)
        .map(|b| ImprovementRow {
            baseline: b.scheduler,
            heuristic_loss: h.total_loss,
            baseline_loss: b.total_loss,
            percent: improvement(h.total_loss, b.total_loss),
        })
        .collect()
}

/// Run all three schedulers with their default settings on one scenario.
pub fn baseline_compare(scenario: &Scenario) -> Result<Vec<RunResult>, EngineError> {
    thread_pool().install(|| SchedulerId::ALL.par_iter().map(|&s| run(scenario, &RunOptions::new(s))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AggregatorId, DeviceRequest, MovementMatrix, PowerModeSet, SystemConfig, DEFAULT_BETA_MAX};
    use crate::workload::{micro_instance, CLASS_COMBINATIONS};

    fn empty() -> Scenario {
        let cfg = SystemConfig {
            num_aggregators: 2,
            budgets_kw: vec![5.0; 2],
            horizon_slots: 4,
            slot_length_h: 0.5,
            beta_max: DEFAULT_BETA_MAX,
            movement: MovementMatrix::linear(2, 0.15),
        };
        Scenario::new("empty", cfg, vec![])
    }

    #[test]
    fn scheduler_names() {
        for s in SchedulerId::ALL {
            assert_eq!(s.name().parse::<SchedulerId>().unwrap(), s);
        }
        assert!(matches!("fifo".parse::<SchedulerId>(), Err(EngineError::UnknownScheduler(_))));
    }

    #[test]
    fn empty_scenario_has_zero_loss() {
        let r = run(&empty(), &RunOptions::new(SchedulerId::Heuristic)).unwrap();
        assert_eq!(r.total_loss, 0.0);
        assert!(r.decisions.is_empty());
        assert_eq!(r.utilization.len(), 4);
    }

    #[test]
    fn invalid_scenario_is_rejected() {
        let mut s = empty();
        s.devices.push(DeviceRequest {
            id: DeviceId(0),
            arrival_slot: 3,
            deadline_slot: 2,
            mobile: false,
            initial_energy_kwh: 0.0,
            demand_kwh: 1.0,
            criticality: 1.6,
            power_modes_kw: PowerModeSet::new(vec![1.0]),
            home: AggregatorId(0),
            source: None,
        });
        assert!(matches!(run(&s, &RunOptions::new(SchedulerId::Edf)), Err(EngineError::InvalidScenario(_))));
    }

    #[test]
    fn total_is_sum_of_ledger_and_replays() {
        for seed in 0..30 {
            let s = micro_instance(seed);
            for sched in SchedulerId::ALL {
                let r = run(&s, &RunOptions::new(sched)).unwrap();
                let sum: f64 = r.devices.iter().map(|d| d.total_loss).sum();
                assert_eq!(r.total_loss, sum);
                assert_eq!(replay(&s, &r.decisions).unwrap(), r.total_loss);
            }
        }
    }

    #[test]
    fn exact_runs_share_the_result_format() {
        for seed in 0..20 {
            let s = micro_instance(seed);
            let ex = run(&s, &RunOptions::new(SchedulerId::Exact)).unwrap();
            let h = run(&s, &RunOptions::new(SchedulerId::Heuristic)).unwrap();
            assert!(ex.total_loss <= h.total_loss);
            assert_eq!(replay(&s, &ex.decisions).unwrap(), ex.total_loss);
        }
        assert_eq!("exact".parse::<SchedulerId>().unwrap(), SchedulerId::Exact);
    }

    #[test]
    fn improvement_examples() {
        let a = improvement(1606.63, 3939.27).unwrap();
        assert!((a - 59.215031).abs() < 1e-5);
        let b = improvement(1606.63, 3757.18).unwrap();
        assert!((b - 57.238407).abs() < 1e-5);
        // the published figures truncate rather than round
        assert_eq!(((a * 100.0).trunc(), (b * 100.0).trunc()), (5921.0, 5723.0));
        assert_eq!(improvement(5.0, 5.0), Some(0.0));
        assert_eq!(improvement(0.0, 0.0), None);
    }

    #[test]
    fn improvement_rows_render_na() {
        let row = ImprovementRow { baseline: SchedulerId::Edf, heuristic_loss: 0.0, baseline_loss: 0.0, percent: None };
        assert!(row.to_string().ends_with("n/a (both zero)"));
        let row = ImprovementRow { baseline: SchedulerId::Hp, heuristic_loss: 1.0, baseline_loss: 0.0, percent: None };
        assert!(row.to_string().ends_with("n/a"));
    }

    #[test]
    fn stats_quantiles() {
        let s = Stats::of(&[4.0, 1.0, 3.0, 2.0], 1);
        assert_eq!((s.n, s.failed, s.min, s.max, s.median, s.mean), (4, 1, 1.0, 4.0, 2.5, 2.5));
        assert!((s.variance - 5.0 / 3.0).abs() < 1e-12);
        assert_eq!((s.q25, s.q75), (1.75, 3.25));
        assert_eq!(Stats::of(&[], 2).failed, 2);
    }

    #[test]
    fn all_stationary_deltas_are_zero() {
        let specs: Vec<GenSpec> = (0..3).map(|seed| GenSpec::grid(20, CLASS_COMBINATIONS[0], 0.0, seed)).collect();
        let summary = mobility_delta_experiment(&specs);
        assert!(summary.samples.iter().all(|s| s.delta == Some(0.0)));
        let g = summary.group(20, None).unwrap();
        assert_eq!((g.stats.n, g.stats.failed), (3, 0));
        assert!(summary.group(20, Some(0.0)).is_some());
    }
}
