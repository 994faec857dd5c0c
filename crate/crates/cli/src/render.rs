//! Plain-text tables for `--format table`. Every table is derived from the
//! same document the JSON output would contain.

use std::fmt::Write;

use gridflex_core::engine::{ExperimentSummary, RunResult};
use gridflex_core::exact::GapReport;
use gridflex_core::Scenario;

use crate::Comparison;

pub fn scenario(s: &Scenario) -> String {
    let mut out = String::new();
    let c = &s.config;
    let _ = writeln!(out, "scenario {}: {} devices, {} aggregators, {} slots of {} h", s.id, s.devices.len(), c.num_aggregators, c.horizon_slots, c.slot_length_h);
    let _ = writeln!(out, "{:>10} {:>8} {:>10}", "aggregator", "devices", "budget_kw");
    for (j, b) in c.budgets_kw.iter().enumerate() {
        let n = s.devices.iter().filter(|d| d.home.0 == j).count();
        let _ = writeln!(out, "{:>10} {:>8} {:>10.2}", format!("a{j}"), n, b);
    }
    out
}

pub fn run_result(r: &RunResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} on {} (mobility {}): total loss {:.6}, {} moves", r.scheduler, r.scenario_id, if r.mobility { "on" } else { "off" }, r.total_loss, r.moves);
    let _ = writeln!(out, "{:>8} {:>16} {:>12} {:>12} {:>16} {:>10} {:>10}", "device", "deadline", "mobility", "stationary", "total", "delivered", "need");
    for d in &r.devices {
        let _ = writeln!(
            out,
            "{:>8} {:>16.4} {:>12.4} {:>12.4} {:>16.4} {:>10.3} {:>10.3}",
            d.device.to_string(),
            d.deadline_loss,
            d.mobility_loss,
            d.stationary_penalty,
            d.total_loss,
            d.delivered_kwh,
            d.need_kwh
        );
    }
    if let Some(ns) = r.median_slot_ns() {
        let _ = writeln!(out, "median slot time {:.1} us", ns as f64 / 1e3);
    }
    out
}

pub fn experiment(e: &ExperimentSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>8} {:>9} {:>5} {:>7} {:>14} {:>14} {:>14} {:>14}", "devices", "mobile", "n", "failed", "mean", "median", "min", "max");
    for g in &e.groups {
        let frac = g.mobile_fraction.map_or_else(|| "all".to_string(), |f| format!("{f:.2}"));
        let s = &g.stats;
        let _ = writeln!(out, "{:>8} {:>9} {:>5} {:>7} {:>14.4e} {:>14.4e} {:>14.4e} {:>14.4e}", g.num_devices, frac, s.n, s.failed, s.mean, s.median, s.min, s.max);
    }
    out
}

pub fn comparisons(rows: &[Comparison]) -> String {
    let mut out = String::new();
    for c in rows {
        let _ = writeln!(out, "{}", c.scenario_id);
        for (sched, loss) in &c.results {
            let _ = writeln!(out, "  {sched:<10} loss {loss:.4}");
        }
        for row in &c.improvements {
            let _ = writeln!(out, "  {row}");
        }
    }
    out
}

pub fn gap(r: &GapReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:>14} {:>14} {:>8}", "scenario", "heuristic", "exact", "ratio");
    for row in &r.rows {
        let exact = row.exact.map_or_else(|| "-".to_string(), |e| format!("{e:.6}"));
        let ratio = row.ratio.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let _ = writeln!(out, "{:<24} {:>14.6} {:>14} {:>8}", row.scenario_id, row.heuristic, exact, ratio);
    }
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    let _ = writeln!(out, "median ratio {}, max ratio {}, refused {}", fmt(r.median_ratio), fmt(r.max_ratio), r.refused);
    out
}
