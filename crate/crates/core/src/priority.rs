//! Per-device priority and the descending-priority ordering.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::model::{DeviceId, Slot};

/// Remaining-demand ratio scaled by urgency.
///
/// Overdue devices scale with lateness, devices before their deadline with
/// the inverse of the slots left, and a device exactly at its deadline gets
/// the plain ratio. Callers exclude devices whose progress exceeds demand.
pub fn priority(progress: f64, demand: f64, t: Slot, deadline: Slot) -> f64 {
    let ratio = (demand - progress) / demand;
    match t.cmp(&deadline) {
        Ordering::Greater => ratio * (t - deadline) as f64,
        Ordering::Less => ratio / (deadline - t) as f64,
        Ordering::Equal => ratio,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorityEntry {
    pub device: DeviceId,
    pub priority: f64,
    pub criticality: f64,
    /// Lowest non-zero mode of the device (kW).
    pub min_mode_kw: f64,
}

/// Descending by priority; ties go to higher criticality, then the smaller
/// lowest mode, then the smaller device id.
pub fn rank(entries: &[PriorityEntry]) -> Vec<PriorityEntry> {
    let mut v = entries.to_vec();
    v.sort_by(compare);
    v
}

pub(crate) fn compare(a: &PriorityEntry, b: &PriorityEntry) -> Ordering {
    b.priority
        .total_cmp(&a.priority)
        .then(b.criticality.total_cmp(&a.criticality))
        .then(a.min_mode_kw.total_cmp(&b.min_mode_kw))
        .then(a.device.cmp(&b.device))
}
