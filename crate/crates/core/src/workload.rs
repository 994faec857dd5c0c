//! Scenario sources: utilization-targeted synthetic generation and
//! ingestion of EV charging-session records.
//!
//! All randomness comes from a ChaCha8 stream seeded from the spec, and
//! demands are rounded to 0.01 kWh, so a seed reproduces the same scenario
//! on every platform.

use std::collections::BTreeMap;
use std::io::Read;

use chrono::{DateTime, NaiveDateTime, Timelike};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::WorkloadError;
use crate::model::{
    AggregatorId, DeviceId, DeviceRequest, MovementMatrix, PowerModeSet, Scenario, Slot, SystemConfig, DEFAULT_BETA_MAX,
};

pub const DEVICE_COUNTS: [usize; 5] = [20, 40, 60, 80, 100];
pub const PERIODS: [usize; 4] = [6, 12, 24, 48];
pub const MODE_POOL_KW: [f64; 7] = [1.0, 2.0, 3.0, 5.0, 10.0, 20.0, 50.0];
pub const KAPPA_POOL: [f64; 3] = [1.6, 1.8, 2.0];
pub const MOBILE_FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Aggregator load class: the band of cluster demand over cluster capacity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LoadClass {
    #[serde(rename = "L")]
    Light,
    #[serde(rename = "M")]
    Medium,
    #[serde(rename = "H")]
    Heavy,
}

impl LoadClass {
    pub fn band(self) -> (f64, f64) {
        match self {
            LoadClass::Light => (0.5, 1.0),
            LoadClass::Medium => (1.0, 1.25),
            LoadClass::Heavy => (1.25, 1.5),
        }
    }
}

use LoadClass::{Heavy as H, Light as L, Medium as M};

/// The four five-aggregator load combinations of the experiment grid.
pub const CLASS_COMBINATIONS: [[LoadClass; 5]; 4] = [[L, L, L, M, H], [L, L, M, M, H], [L, M, M, M, H], [L, L, M, H, H]];

/// Parameters of one synthetic scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSpec {
    /// Physical devices; periodic devices issue several requests each.
    pub num_devices: usize,
    /// One load class per aggregator.
    pub classes: Vec<LoadClass>,
    pub periods: Vec<usize>,
    pub mode_pool_kw: Vec<f64>,
    pub mobile_fraction: f64,
    pub kappa_pool: Vec<f64>,
    pub horizon_slots: usize,
    pub slot_length_h: f64,
    /// Energy an aggregator can supply over the whole horizon (kWh).
    pub capacity_kwh: f64,
    pub move_cost_kwh: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            num_devices: 20,
            classes: CLASS_COMBINATIONS[0].to_vec(),
            periods: PERIODS.to_vec(),
            mode_pool_kw: MODE_POOL_KW.to_vec(),
            mobile_fraction: 0.5,
            kappa_pool: KAPPA_POOL.to_vec(),
            horizon_slots: 50,
            slot_length_h: 0.5,
            capacity_kwh: 500.0,
            move_cost_kwh: 0.15,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn grid(num_devices: usize, classes: [LoadClass; 5], mobile_fraction: f64, seed: u64) -> Self {
        Self { num_devices, classes: classes.to_vec(), mobile_fraction, seed, ..Self::default() }
    }

    /// Per-slot aggregator budget that supplies `capacity_kwh` over the horizon.
    pub fn budget_kw(&self) -> f64 {
        self.capacity_kwh / (self.slot_length_h * self.horizon_slots as f64)
    }

    fn check(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::Spec(m.into()));
        if self.classes.is_empty() {
            return bad("at least one aggregator class");
        }
        if self.periods.is_empty() || self.periods.iter().any(|&p| p == 0 || p > self.horizon_slots) {
            return bad("periods must lie in 1..=horizon");
        }
        if self.kappa_pool.is_empty() || self.kappa_pool.iter().any(|&k| !(k > 0.0)) {
            return bad("criticality pool must hold positive values");
        }
        if !(0.0..=1.0).contains(&self.mobile_fraction) {
            return bad("mobile fraction must lie in [0, 1]");
        }
        if !(self.slot_length_h > 0.0) || !(self.capacity_kwh > 0.0) || !(self.move_cost_kwh >= 0.0) {
            return bad("slot length and capacity must be positive, movement cost non-negative");
        }
        if !PowerModeSet::new(self.mode_pool_kw.clone()).is_strictly_increasing() {
            return bad("mode pool must be strictly increasing and positive");
        }
        Ok(())
    }
}

/// Smallest demand a physical device gets per request (kWh).
const MIN_REQUEST_KWH: f64 = 0.5;
const RESAMPLES: usize = 20;

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn floor2(x: f64) -> f64 {
    (x * 100.0 + 1e-9).floor() / 100.0
}

/// Uniform point on the simplex from the spacings of sorted uniforms.
fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut cuts: Vec<f64> = (0..n.saturating_sub(1)).map(|_| rng.random::<f64>()).collect();
    cuts.sort_by(f64::total_cmp);
    let mut prev = 0.0;
    let mut w: Vec<f64> = cuts
        .iter()
        .map(|&c| {
            let d = c - prev;
            prev = c;
            d
        })
        .collect();
    w.push(1.0 - prev);
    w
}

/// Split `free` energy across devices by `weights` with per-device headroom,
/// moving anything above a headroom onto the devices still below theirs.
fn clip_and_redistribute(free: f64, weights: &[f64], headroom: &[f64]) -> Option<Vec<f64>> {
    let mut share = vec![0.0; weights.len()];
    let mut open: Vec<usize> = (0..weights.len()).collect();
    let mut left = free;
    while left > 1e-9 {
        let wsum: f64 = open.iter().map(|&i| weights[i]).sum();
        if open.is_empty() {
            return None;
        }
        let mut spill = 0.0;
        let mut still = Vec::with_capacity(open.len());
        for &i in &open {
            let add = if wsum > 0.0 { left * weights[i] / wsum } else { left / open.len() as f64 };
            let room = headroom[i] - share[i];
            if add >= room {
                share[i] = headroom[i];
                spill += add - room;
            } else {
                share[i] += add;
                still.push(i);
            }
        }
        open = still;
        left = spill;
    }
    Some(share)
}

struct Physical {
    period: usize,
    requests: usize,
    kappa: f64,
    mobile: bool,
}

/// Generate a scenario from `spec`.
///
/// Every cluster draws a utilization target inside its class band and splits
/// it over its devices with a uniform simplex draw, resampled (then clipped)
/// until each device fits under its best mode. Devices are periodic: a
/// device with period `P` issues requests `[0, P)`, `[P, 2P)`, ... inside the
/// horizon. Homes are assigned round-robin.
pub fn generate(spec: &GenSpec) -> Result<Scenario, WorkloadError> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_agg = spec.classes.len();
    let budget = spec.budget_kw();
    let pool: Vec<f64> = spec.mode_pool_kw.iter().copied().filter(|&m| m <= budget + 1e-9).collect();
    let Some(&top) = pool.last() else {
        return Err(WorkloadError::Spec(format!("no mode in the pool fits the {budget} kW budget")));
    };

    let mobile_count = (spec.mobile_fraction * spec.num_devices as f64).round() as usize;
    let mut mobile = vec![false; spec.num_devices];
    mobile[..mobile_count].fill(true);
    mobile.shuffle(&mut rng);
    let physical: Vec<Physical> = (0..spec.num_devices)
        .map(|p| {
            let period = *spec.periods.choose(&mut rng).expect("checked non-empty");
            Physical {
                period,
                requests: spec.horizon_slots / period,
                kappa: *spec.kappa_pool.choose(&mut rng).expect("checked non-empty"),
                mobile: mobile[p],
            }
        })
        .collect();

    let mut devices = Vec::new();
    for (j, class) in spec.classes.iter().enumerate() {
        let members: Vec<usize> = (j..spec.num_devices).step_by(n_agg).collect();
        let (lo, hi) = class.band();
        let target = spec.capacity_kwh * rng.random_range(lo..hi);
        if members.is_empty() {
            return Err(WorkloadError::Infeasible { cluster: j, reason: "no devices assigned".into() });
        }
        let floor: Vec<f64> = members.iter().map(|&p| MIN_REQUEST_KWH * physical[p].requests as f64).collect();
        let cap: Vec<f64> = members
            .iter()
            .map(|&p| {
                let ph = &physical[p];
                floor2(top * spec.slot_length_h * ph.period as f64) * ph.requests as f64
            })
            .collect();
        let floor_sum: f64 = floor.iter().sum();
        if floor_sum > target || cap.iter().sum::<f64>() < target {
            return Err(WorkloadError::Infeasible {
                cluster: j,
                reason: format!(
                    "target {target:.2} kWh is outside [{floor_sum:.2}, {:.2}] reachable by {} devices",
                    cap.iter().sum::<f64>(),
                    members.len()
                ),
            });
        }
        let headroom: Vec<f64> = cap.iter().zip(&floor).map(|(c, f)| c - f).collect();
        let free = target - floor_sum;
        let mut weights = simplex(&mut rng, members.len());
        for _ in 0..RESAMPLES {
            if weights.iter().zip(&headroom).all(|(w, h)| free * w <= *h) {
                break;
            }
            weights = simplex(&mut rng, members.len());
        }
        let extra = clip_and_redistribute(free, &weights, &headroom)
            .ok_or_else(|| WorkloadError::Infeasible { cluster: j, reason: "clipping ran out of headroom".into() })?;

        for (m, &p) in members.iter().enumerate() {
            let ph = &physical[p];
            let per_request_cap = floor2(top * spec.slot_length_h * ph.period as f64);
            let energy = round2((floor[m] + extra[m]) / ph.requests as f64).clamp(0.01, per_request_cap);
            let required = energy / (spec.slot_length_h * ph.period as f64);
            let modes = pick_modes(&mut rng, &pool, required);
            for r in 0..ph.requests {
                let initial = round2(energy * rng.random_range(0.2..0.8));
                devices.push(DeviceRequest {
                    id: DeviceId(devices.len() as u32),
                    arrival_slot: r * ph.period,
                    deadline_slot: (r + 1) * ph.period,
                    mobile: ph.mobile,
                    initial_energy_kwh: initial,
                    demand_kwh: energy,
                    criticality: ph.kappa,
                    power_modes_kw: modes.clone(),
                    home: AggregatorId(j),
                    source: Some(p as u32),
                });
            }
        }
    }
    devices.sort_by_key(|d| (d.source, d.arrival_slot));
    for (i, d) in devices.iter_mut().enumerate() {
        d.id = DeviceId(i as u32);
    }

    let config = SystemConfig {
        num_aggregators: n_agg,
        budgets_kw: vec![budget; n_agg],
        horizon_slots: spec.horizon_slots,
        slot_length_h: spec.slot_length_h,
        beta_max: DEFAULT_BETA_MAX,
        movement: MovementMatrix::linear(n_agg, spec.move_cost_kwh),
    };
    let classes: String = spec
        .classes
        .iter()
        .map(|c| match c {
            L => 'L',
            M => 'M',
            H => 'H',
        })
        .collect();
    let id = format!("gen-n{}-{}-m{}-s{}", spec.num_devices, classes, (spec.mobile_fraction * 100.0).round(), spec.seed);
    Ok(Scenario::new(id, config, devices))
}

/// Top mode: a random pool level that makes `required_kw` feasible. Lower
/// pool levels join with probability one half, at most two of them.
fn pick_modes(rng: &mut ChaCha8Rng, pool: &[f64], required_kw: f64) -> PowerModeSet {
    let first = pool.iter().position(|&m| m + 1e-9 >= required_kw).unwrap_or(pool.len() - 1);
    let top_idx = rng.random_range(first..pool.len());
    let mut levels: Vec<f64> = pool[..top_idx].iter().copied().filter(|_| rng.random_bool(0.5)).collect();
    if levels.len() > 2 {
        levels.drain(..levels.len() - 2);
    }
    levels.push(pool[top_idx]);
    PowerModeSet::new(levels)
}

/// Total home demand of each cluster over its capacity.
pub fn cluster_utilization(scenario: &Scenario, capacity_kwh: f64) -> Vec<f64> {
    let mut u = vec![0.0; scenario.config.num_aggregators];
    for d in &scenario.devices {
        u[d.home.0] += d.demand_kwh;
    }
    u.iter().map(|x| x / capacity_kwh).collect()
}

/// Random micro instance for the exact solver: at most 3 devices,
/// 2 aggregators, 6 slots and 2 modes per device.
pub fn micro_instance(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_agg = rng.random_range(1..=2);
    let horizon = rng.random_range(3..=6);
    let n_dev = rng.random_range(1..=3);
    let budgets = (0..n_agg).map(|_| [2.0, 3.0, 4.0, 5.0][rng.random_range(0..4)]).collect();
    let devices = (0..n_dev)
        .map(|k| {
            let arrival = rng.random_range(0..horizon - 1);
            let deadline = rng.random_range(arrival + 1..=horizon);
            let levels: Vec<f64> = if rng.random_bool(0.5) {
                vec![[1.0, 2.0, 3.0, 4.0][rng.random_range(0..4)]]
            } else {
                let a = rng.random_range(1..=3);
                vec![a as f64, rng.random_range(a + 1..=4) as f64]
            };
            let max = levels[levels.len() - 1] * 0.5 * (deadline - arrival) as f64;
            let demand = (rng.random_range(0.25..=1.0) * max * 2.0).ceil() / 2.0;
            DeviceRequest {
                id: DeviceId(k),
                arrival_slot: arrival,
                deadline_slot: deadline,
                mobile: rng.random_bool(0.5),
                initial_energy_kwh: [0.0, 0.5, 1.0, 2.0][rng.random_range(0..4)],
                demand_kwh: demand.min(max),
                criticality: *KAPPA_POOL.choose(&mut rng).expect("non-empty"),
                power_modes_kw: PowerModeSet::new(levels),
                home: AggregatorId(rng.random_range(0..n_agg)),
                source: None,
            }
        })
        .collect();
    let config = SystemConfig {
        num_aggregators: n_agg,
        budgets_kw: budgets,
        horizon_slots: horizon,
        slot_length_h: 0.5,
        beta_max: DEFAULT_BETA_MAX,
        movement: MovementMatrix::linear(n_agg, 0.15),
    };
    Scenario::new(format!("micro-{seed}"), config, devices)
}

/// One charging session as recorded by a charging network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub arrival: NaiveDateTime,
    pub departure: NaiveDateTime,
    pub kwh: f64,
    pub station: String,
}

#[derive(Deserialize)]
struct RawSession {
    arrival: String,
    departure: String,
    kwh: f64,
    station: String,
}

fn parse_time(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    DateTime::parse_from_rfc3339(s)
        .map(|d| d.naive_local())
        .ok()
        .or_else(|| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S").ok())
        .or_else(|| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S").ok())
}

/// Read sessions from delimited text with an `arrival,departure,kwh,station` header.
pub fn read_sessions(r: impl Read) -> Result<Vec<SessionRecord>, WorkloadError> {
    let mut out = Vec::new();
    for (i, row) in csv::Reader::from_reader(r).deserialize::<RawSession>().enumerate() {
        let raw = row?;
        let time = |s: &str| {
            parse_time(s).ok_or_else(|| WorkloadError::Record { record: i + 1, reason: format!("bad timestamp '{s}'") })
        };
        out.push(SessionRecord { arrival: time(&raw.arrival)?, departure: time(&raw.departure)?, kwh: raw.kwh, station: raw.station });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    /// Aggregator count; by default one per distinct station.
    pub num_aggregators: Option<usize>,
    pub budget_kw: f64,
    pub horizon_slots: usize,
    pub slot_length_h: f64,
    pub mode_pool_kw: Vec<f64>,
    pub kappa_pool: Vec<f64>,
    pub mobile_fraction: f64,
    pub move_cost_kwh: f64,
    /// Seeds the criticality, mode, mobility and initial-charge completion.
    pub seed: u64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            num_aggregators: None,
            budget_kw: 80.0,
            horizon_slots: 48,
            slot_length_h: 0.5,
            mode_pool_kw: MODE_POOL_KW.to_vec(),
            kappa_pool: KAPPA_POOL.to_vec(),
            mobile_fraction: 0.5,
            move_cost_kwh: 0.15,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipCounts {
    pub departure_not_after_arrival: usize,
    pub non_positive_energy: usize,
    pub no_window: usize,
    pub infeasible: usize,
}

impl SkipCounts {
    pub fn total(&self) -> usize {
        self.departure_not_after_arrival + self.non_positive_energy + self.no_window + self.infeasible
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub scenario: Scenario,
    pub skipped: SkipCounts,
}

/// Slot of the day a timestamp falls in.
pub fn day_slot(t: NaiveDateTime, slot_length_h: f64, slots_per_day: usize) -> Slot {
    let minutes = (t.hour() * 60 + t.minute()) as f64;
    ((minutes / (slot_length_h * 60.0)).floor() as usize) % slots_per_day
}

/// Map sessions onto one day of slots.
///
/// Arrival is the time-of-day slot; the deadline is arrival plus the session
/// length in whole slots, clipped to the last slot. The top mode is the
/// smallest pool level (within the budget) that can deliver the energy in
/// time; lower levels, criticality, mobility and initial charge are drawn
/// from `opts.seed`. Unusable records are skipped and counted.
pub fn ingest_sessions(records: &[SessionRecord], opts: &IngestOptions) -> Result<Ingested, WorkloadError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let tau = opts.horizon_slots;
    if tau < 2 || !(opts.slot_length_h > 0.0) || opts.kappa_pool.is_empty() {
        return Err(WorkloadError::Spec("ingest needs at least two slots, a positive slot length and a criticality pool".into()));
    }
    let stations: BTreeMap<&str, usize> = {
        let mut names: Vec<&str> = records.iter().map(|r| r.station.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        names.into_iter().enumerate().map(|(i, s)| (s, i)).collect()
    };
    let n_agg = opts.num_aggregators.unwrap_or(stations.len()).max(1);
    let pool: Vec<f64> = opts.mode_pool_kw.iter().copied().filter(|&m| m <= opts.budget_kw + 1e-9).collect();

    let mut skipped = SkipCounts::default();
    let mut devices = Vec::new();
    for rec in records {
        if rec.departure <= rec.arrival {
            skipped.departure_not_after_arrival += 1;
            continue;
        }
        if !(rec.kwh > 0.0) {
            skipped.non_positive_energy += 1;
            continue;
        }
        let arrival = day_slot(rec.arrival, opts.slot_length_h, tau);
        let minutes = (rec.departure - rec.arrival).num_minutes() as f64;
        let duration = (minutes / (opts.slot_length_h * 60.0)).floor() as usize;
        let deadline = (arrival + duration).min(tau - 1);
        if deadline <= arrival {
            skipped.no_window += 1;
            continue;
        }
        let demand = round2(rec.kwh);
        let required = demand / (opts.slot_length_h * (deadline - arrival) as f64);
        let Some(top) = pool.iter().position(|&m| m + 1e-9 >= required) else {
            skipped.infeasible += 1;
            continue;
        };
        let mut levels: Vec<f64> = pool[..top].iter().copied().filter(|_| rng.random_bool(0.5)).collect();
        levels.push(pool[top]);
        devices.push(DeviceRequest {
            id: DeviceId(devices.len() as u32),
            arrival_slot: arrival,
            deadline_slot: deadline,
            mobile: rng.random_bool(opts.mobile_fraction.clamp(0.0, 1.0)),
            initial_energy_kwh: round2(demand * rng.random_range(0.2..0.8)),
            demand_kwh: demand,
            criticality: *opts.kappa_pool.choose(&mut rng).expect("checked non-empty"),
            power_modes_kw: PowerModeSet::new(levels),
            home: AggregatorId(stations[rec.station.as_str()] % n_agg),
            source: None,
        });
    }
    if skipped.total() > 0 {
        log::warn!("skipped {} of {} session records: {:?}", skipped.total(), records.len(), skipped);
    }
    let config = SystemConfig {
        num_aggregators: n_agg,
        budgets_kw: vec![opts.budget_kw; n_agg],
        horizon_slots: tau,
        slot_length_h: opts.slot_length_h,
        beta_max: DEFAULT_BETA_MAX,
        movement: MovementMatrix::linear(n_agg, opts.move_cost_kwh),
    };
    Ok(Ingested { scenario: Scenario::new(format!("sessions-s{}", opts.seed), config, devices), skipped })
}
