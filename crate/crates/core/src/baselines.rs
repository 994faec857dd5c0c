//! Reference schedulers: earliest deadline first and highest remaining demand
//! first. Both reuse the heuristic's two serving passes, so only the ranking
//! differs.

use crate::heuristic::{schedule_slot, AggregatorState, ClusterSchedule, Ranking, SchedulerConfig, UpgradePolicy};
use crate::model::{DeviceState, Slot};

pub fn edf_schedule_slot(agg: &AggregatorState, cluster: &[&DeviceState], t: Slot, slot_length_h: f64) -> ClusterSchedule {
    schedule_slot(agg, cluster, t, Ranking::EarliestDeadline, UpgradePolicy::RoundRobin, slot_length_h)
}

pub fn hp_schedule_slot(agg: &AggregatorState, cluster: &[&DeviceState], t: Slot, slot_length_h: f64) -> ClusterSchedule {
    schedule_slot(agg, cluster, t, Ranking::HighestPower, UpgradePolicy::RoundRobin, slot_length_h)
}

/// Earliest-deadline configuration; movement is off unless re-enabled.
pub fn edf() -> SchedulerConfig {
    SchedulerConfig::with_ranking(Ranking::EarliestDeadline).set_mobility_enabled(false)
}

/// Highest-power configuration; movement is off unless re-enabled.
pub fn highest_power() -> SchedulerConfig {
    SchedulerConfig::with_ranking(Ranking::HighestPower).set_mobility_enabled(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heuristic::service_order;
    use crate::model::{AggregatorId, DeviceId, DeviceRequest, PowerModeSet};

    fn dev(id: u32, deadline: Slot, demand: f64) -> DeviceState {
        DeviceState::new(DeviceRequest {
            id: DeviceId(id),
            arrival_slot: 0,
            deadline_slot: deadline,
            mobile: false,
            initial_energy_kwh: 0.0,
            demand_kwh: demand,
            criticality: 1.6,
            power_modes_kw: PowerModeSet::new(vec![50.0]),
            home: AggregatorId(0),
            source: None,
        })
    }

    fn ids(cluster: &[&DeviceState], order: &[usize]) -> Vec<u32> {
        order.iter().map(|&i| cluster[i].id().0).collect()
    }

    #[test]
    fn edf_orders_by_deadline_then_id() {
        let (a, b, c) = (dev(0, 5, 1.0), dev(1, 3, 1.0), dev(2, 9, 1.0));
        let cl = [&a, &b, &c];
        assert_eq!(ids(&cl, &service_order(&cl, 0, Ranking::EarliestDeadline)), vec![1, 0, 2]);
        let (a, b) = (dev(4, 6, 1.0), dev(2, 6, 9.0));
        let cl = [&a, &b];
        assert_eq!(ids(&cl, &service_order(&cl, 0, Ranking::EarliestDeadline)), vec![2, 4]);
    }

    #[test]
    fn hp_orders_by_remaining_demand() {
        let (a, b, c) = (dev(0, 9, 10.0), dev(1, 9, 50.0), dev(2, 9, 3.0));
        let cl = [&a, &b, &c];
        assert_eq!(ids(&cl, &service_order(&cl, 0, Ranking::HighestPower)), vec![1, 0, 2]);
    }

    #[test]
    fn baselines_serve_in_rank_order() {
        let (a, b) = (dev(0, 9, 40.0), dev(1, 3, 10.0));
        let agg = AggregatorState::new(AggregatorId(0), 50.0);
        let cl = [&a, &b];
        assert_eq!(edf_schedule_slot(&agg, &cl, 0, 0.5).modes, vec![0, 1]);
        assert_eq!(hp_schedule_slot(&agg, &cl, 0, 0.5).modes, vec![1, 0]);
        assert!(!edf().mobility && !highest_power().mobility);
    }
}
