//! `gridflex`: generate, ingest, schedule, validate and compare.
//!
//! Exit status: 0 success, 1 usage or I/O error, 2 validation failure,
//! 3 exact-solver caps exceeded.

mod render;

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gridflex_core::engine::{self, improvement_report, mobility_delta_experiment, RunOptions, RunResult, SchedulerId};
use gridflex_core::exact::{gap_report, instances, validate_schedule, ExactCaps};
use gridflex_core::workload::{self, GenSpec, IngestOptions, LoadClass, DEVICE_COUNTS, MOBILE_FRACTIONS};
use gridflex_core::{EngineError, ExactError, Scenario, SlotDecision};

#[derive(Parser)]
#[command(name = "gridflex", version, about = "Multi-aggregator demand-side scheduling simulator")]
struct Cli {
    /// Seed for generation, ingest completion and experiment corpora.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Override whether devices may move between aggregators.
    #[arg(long, global = true, value_enum)]
    mobility: Option<Toggle>,
    #[arg(long, global = true, value_enum, default_value_t = Sched::Heuristic)]
    scheduler: Sched,
    /// Write the output document here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Sched {
    Heuristic,
    Edf,
    Hp,
}

impl From<Sched> for SchedulerId {
    fn from(s: Sched) -> Self {
        match s {
            Sched::Heuristic => SchedulerId::Heuristic,
            Sched::Edf => SchedulerId::Edf,
            Sched::Hp => SchedulerId::Hp,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario.
    Generate(GenerateArgs),
    /// Turn charging-session records into a scenario.
    Ingest(IngestArgs),
    /// Schedule a scenario and emit the result document.
    Run(RunArgs),
    /// Run an experiment suite.
    #[command(subcommand)]
    Experiment(Experiment),
    /// Check a schedule against every feasibility constraint.
    Validate(ValidateArgs),
    /// Solve a small scenario to optimality.
    SolveExact(SolveArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Physical device count.
    #[arg(long, default_value_t = 20)]
    devices: usize,
    /// One load class letter (L, M, H) per aggregator.
    #[arg(long, default_value = "LLLMH")]
    classes: String,
    #[arg(long, default_value_t = 0.5)]
    mobile_fraction: f64,
    /// Full generation spec as JSON; overrides the flags above except --seed.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    /// Delimited file with an arrival,departure,kwh,station header.
    sessions: PathBuf,
    #[arg(long)]
    budget_kw: Option<f64>,
    /// Aggregator count; defaults to one per station.
    #[arg(long)]
    aggregators: Option<usize>,
    #[arg(long)]
    mobile_fraction: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    /// Schedule the aggregators of each slot on the worker pool.
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    ledger_csv: Option<PathBuf>,
    #[arg(long)]
    utilization_csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Experiment {
    /// Loss with movement minus loss without, over generated corpora.
    MobilityDelta {
        /// Device counts to sample; defaults to 20,40,60,80,100.
        #[arg(long, value_delimiter = ',')]
        devices: Vec<usize>,
        /// Samples per device count, cycling through class combinations and mobile fractions.
        #[arg(long, default_value_t = 50)]
        samples: u64,
        /// Also write one row per sample here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Heuristic against the EDF and HP baselines.
    BaselineCompare {
        #[arg(long, conflicts_with = "sessions", required_unless_present = "sessions")]
        scenario: Option<PathBuf>,
        /// Ingest these sessions once per seed instead of reading a scenario.
        #[arg(long)]
        sessions: Option<PathBuf>,
        /// Consecutive seeds starting at --seed (sessions only).
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        budget_kw: Option<f64>,
    },
    /// Exact optimum against the heuristic on random micro instances.
    OracleGap {
        #[arg(long, default_value_t = 100)]
        instances: u64,
    },
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// A run result, an exact solution, or a bare list of decisions.
    #[arg(long)]
    schedule: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    scenario: PathBuf,
    #[arg(long)]
    max_devices: Option<usize>,
    #[arg(long)]
    max_slots: Option<usize>,
    #[arg(long)]
    max_modes: Option<usize>,
    #[arg(long)]
    max_aggregators: Option<usize>,
    #[arg(long)]
    node_budget: Option<u64>,
}

/// An error with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = match error.downcast_ref::<EngineError>() {
            Some(EngineError::Infeasible(_) | EngineError::InvalidScenario(_) | EngineError::Schedule(_)) => 2,
            Some(EngineError::Exact(ExactError::CapExceeded(_) | ExactError::NodeBudget(_))) => 3,
            Some(EngineError::Exact(ExactError::InvalidScenario(_))) => 2,
            _ => 1,
        };
        Failure { code, error }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8, Failure> {
    match &cli.command {
        Command::Generate(a) => {
            let spec = generation_spec(a, cli.seed)?;
            let scenario = workload::generate(&spec).map_err(EngineError::from)?;
            emit(cli, &scenario, || render::scenario(&scenario))?;
        }
        Command::Ingest(a) => {
            let records = workload::read_sessions(open(&a.sessions)?).map_err(EngineError::from)?;
            let defaults = IngestOptions::default();
            let opts = IngestOptions {
                num_aggregators: a.aggregators,
                budget_kw: a.budget_kw.unwrap_or(defaults.budget_kw),
                mobile_fraction: a.mobile_fraction.unwrap_or(defaults.mobile_fraction),
                seed: cli.seed,
                ..defaults
            };
            let out = workload::ingest_sessions(&records, &opts).map_err(EngineError::from)?;
            if out.skipped.total() > 0 {
                eprintln!("skipped {} of {} records: {:?}", out.skipped.total(), records.len(), out.skipped);
            }
            emit(cli, &out.scenario, || render::scenario(&out.scenario))?;
        }
        Command::Run(a) => {
            let scenario = load_scenario(&a.scenario)?;
            let opts = RunOptions { scheduler: cli.scheduler.into(), mobility: cli.mobility.map(|m| m == Toggle::On), parallel: a.parallel };
            let result = engine::thread_pool().install(|| engine::run(&scenario, &opts))?;
            if let Some(p) = &a.ledger_csv {
                result.write_ledger_csv(create(p)?)?;
            }
            if let Some(p) = &a.utilization_csv {
                result.write_utilization_csv(create(p)?)?;
            }
            emit(cli, &result, || render::run_result(&result))?;
        }
        Command::Experiment(e) => return experiment(cli, e),
        Command::Validate(a) => {
            let scenario = load_scenario(&a.scenario)?;
            let decisions = load_decisions(&a.schedule)?;
            let report = validate_schedule(&decisions, &scenario.config, &scenario.devices).map_err(EngineError::from)?;
            emit(cli, &report, || report.to_string())?;
            return Ok(if report.all_passed() { 0 } else { 2 });
        }
        Command::SolveExact(a) => {
            let scenario = load_scenario(&a.scenario)?;
            let caps = caps(a);
            let result = engine::run_with_caps(&scenario, &RunOptions::new(SchedulerId::Exact), &caps)?;
            emit(cli, &result, || render::run_result(&result))?;
        }
    }
    Ok(0)
}

fn experiment(cli: &Cli, e: &Experiment) -> Result<u8, Failure> {
    match e {
        Experiment::MobilityDelta { devices, samples, csv } => {
            let counts = if devices.is_empty() { DEVICE_COUNTS.to_vec() } else { devices.clone() };
            let combos = workload::CLASS_COMBINATIONS;
            let specs: Vec<GenSpec> = counts
                .iter()
                .flat_map(|&n| {
                    (0..*samples).map(move |i| {
                        let combo = combos[(i % combos.len() as u64) as usize];
                        let frac = MOBILE_FRACTIONS[((i / combos.len() as u64) % MOBILE_FRACTIONS.len() as u64) as usize];
                        GenSpec::grid(n, combo, frac, cli.seed.wrapping_add(i))
                    })
                })
                .collect();
            let summary = mobility_delta_experiment(&specs);
            if let Some(p) = csv {
                summary.write_samples_csv(create(p)?)?;
            }
            emit(cli, &summary, || render::experiment(&summary))?;
        }
        Experiment::BaselineCompare { scenario, sessions, seeds, budget_kw } => {
            let scenarios: Vec<Scenario> = match (scenario, sessions) {
                (Some(p), _) => vec![load_scenario(p)?],
                (None, Some(p)) => {
                    let records = workload::read_sessions(open(p)?).map_err(EngineError::from)?;
                    let defaults = IngestOptions::default();
                    (0..*seeds)
                        .map(|i| {
                            let opts = IngestOptions {
                                seed: cli.seed.wrapping_add(i),
                                budget_kw: budget_kw.unwrap_or(defaults.budget_kw),
                                ..defaults.clone()
                            };
                            workload::ingest_sessions(&records, &opts).map(|o| o.scenario).map_err(EngineError::from)
                        })
                        .collect::<Result<_, _>>()?
                }
                (None, None) => return Err(anyhow!("either --scenario or --sessions is required").into()),
            };
            let mut runs = Vec::new();
            for s in &scenarios {
                let results = engine::baseline_compare(s)?;
                runs.push(Comparison { scenario_id: s.id.clone(), improvements: improvement_report(&results), results: totals(&results) });
            }
            emit(cli, &runs, || render::comparisons(&runs))?;
        }
        Experiment::OracleGap { instances: n } => {
            let corpus = instances((0..*n).map(|i| workload::micro_instance(cli.seed.wrapping_add(i))), ExactCaps::default());
            let mut sched = SchedulerId::Heuristic.config();
            if let Some(m) = cli.mobility {
                sched = sched.set_mobility_enabled(m == Toggle::On);
            }
            let report = gap_report(&corpus, &sched);
            emit(cli, &report, || render::gap(&report))?;
            return Ok(if report.refused > 0 { 3 } else { 0 });
        }
    }
    Ok(0)
}

#[derive(Serialize)]
pub(crate) struct Comparison {
    pub scenario_id: String,
    pub results: Vec<(SchedulerId, f64)>,
    pub improvements: Vec<engine::ImprovementRow>,
}

fn totals(results: &[RunResult]) -> Vec<(SchedulerId, f64)> {
    results.iter().map(|r| (r.scheduler, r.total_loss)).collect()
}

fn caps(a: &SolveArgs) -> ExactCaps {
    let d = ExactCaps::default();
    ExactCaps {
        max_devices: a.max_devices.unwrap_or(d.max_devices),
        max_slots: a.max_slots.unwrap_or(d.max_slots),
        max_modes: a.max_modes.unwrap_or(d.max_modes),
        max_aggregators: a.max_aggregators.unwrap_or(d.max_aggregators),
        node_budget: a.node_budget.unwrap_or(d.node_budget),
    }
}

fn generation_spec(a: &GenerateArgs, seed: u64) -> anyhow::Result<GenSpec> {
    if let Some(p) = &a.spec {
        let spec: GenSpec = serde_json::from_reader(open(p)?).with_context(|| format!("reading {}", p.display()))?;
        return Ok(GenSpec { seed, ..spec });
    }
    let classes = a
        .classes
        .chars()
        .map(|c| match c.to_ascii_uppercase() {
            'L' => Ok(LoadClass::Light),
            'M' => Ok(LoadClass::Medium),
            'H' => Ok(LoadClass::Heavy),
            other => Err(anyhow!("unknown load class '{other}' (expected L, M or H)")),
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(GenSpec { num_devices: a.devices, classes, mobile_fraction: a.mobile_fraction, seed, ..GenSpec::default() })
}

fn open(p: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?))
}

fn create(p: &Path) -> anyhow::Result<File> {
    File::create(p).with_context(|| format!("creating {}", p.display()))
}

fn load_scenario(p: &Path) -> Result<Scenario, Failure> {
    let s = Scenario::from_reader(open(p)?).map_err(EngineError::from).with_context(|| format!("reading {}", p.display()))?;
    Ok(s)
}

/// Accept a document with a `decisions` field or a bare decision list.
fn load_decisions(p: &Path) -> anyhow::Result<Vec<SlotDecision>> {
    let value: serde_json::Value = serde_json::from_reader(open(p)?).with_context(|| format!("reading {}", p.display()))?;
    let list = match value {
        serde_json::Value::Object(mut m) => m.remove("decisions").ok_or_else(|| anyhow!("{} has no decisions", p.display()))?,
        v @ serde_json::Value::Array(_) => v,
        _ => bail!("{} is neither a result document nor a decision list", p.display()),
    };
    Ok(serde_json::from_value(list)?)
}

fn emit<T: Serialize>(cli: &Cli, doc: &T, table: impl FnOnce() -> String) -> anyhow::Result<()> {
    let text = match cli.format {
        Format::Json => serde_json::to_string_pretty(doc)? + "\n",
        Format::Table => table(),
    };
    match &cli.out {
        Some(p) => create(p)?.write_all(text.as_bytes())?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}
