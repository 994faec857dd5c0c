use gridflex_core::engine::{replay, run, RunOptions, SchedulerId};
use gridflex_core::exact::{solve_exact, validate_schedule, ExactInstance};
use gridflex_core::model::{Action, AggregatorId, DeviceId, DeviceRequest, Location, PowerModeSet, Scenario, SlotDecision};
use gridflex_core::utility::advance;
use gridflex_core::workload::{generate, micro_instance, GenSpec, CLASS_COMBINATIONS, MOBILE_FRACTIONS};
use gridflex_core::DeviceState;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_spec() -> impl Strategy<Value = GenSpec> {
    (prop::sample::select(vec![20usize, 40]), 0usize..4, 0usize..4, any::<u64>())
        .prop_map(|(n, c, f, seed)| GenSpec::grid(n, CLASS_COMBINATIONS[c], MOBILE_FRACTIONS[f], seed))
}

fn sched() -> impl Strategy<Value = SchedulerId> {
    prop::sample::select(SchedulerId::ALL.to_vec())
}

/// A random schedule built from actions the loss model accepts, with no budget awareness.
fn random_schedule(s: &Scenario, rng: &mut ChaCha8Rng) -> Vec<SlotDecision> {
    let cfg = &s.config;
    let mut states: Vec<DeviceState> = s.devices.iter().cloned().map(DeviceState::new).collect();
    let mut out = Vec::new();
    for t in 0..cfg.horizon_slots {
        for st in states.iter_mut() {
            let action = match st.location {
                Location::InTransit { from, to, .. } => Action::Move { from, to },
                Location::At(_) if !st.is_active(t) || st.is_complete() => Action::Idle,
                Location::At(here) => match rng.random_range(0..4) {
                    0 => Action::Idle,
                    1 if st.request.mobile && cfg.num_aggregators > 1 => {
                        let to = AggregatorId((here.0 + 1) % cfg.num_aggregators);
                        Action::Move { from: here, to }
                    }
                    _ => Action::Serve { mode: rng.random_range(1..=st.request.power_modes_kw.count()), aggregator: here },
                },
            };
            advance(st, action, t, cfg).expect("constructed action is valid");
            out.push(SlotDecision { device: st.id(), slot: t, action });
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn schedules_respect_budgets_and_energy(spec in small_spec(), sched in sched()) {
        let s = generate(&spec).unwrap();
        let r = run(&s, &RunOptions::new(sched)).unwrap();
        for row in &r.utilization {
            for &u in row {
                prop_assert!(u <= 1.0 + 1e-9);
            }
        }
        let mut served = vec![0.0; s.config.num_aggregators];
        for d in &r.decisions {
            if let Action::Serve { mode, aggregator } = d.action {
                let k = s.device_index(d.device).unwrap();
                served[aggregator.0] += s.devices[k].power_modes_kw.level(mode).unwrap() * s.config.slot_length_h;
            }
        }
        for (j, e) in served.iter().enumerate() {
            prop_assert!(*e <= s.config.budgets_kw[j] * s.config.slot_length_h * s.config.horizon_slots as f64 + 1e-6);
        }
        for d in &r.devices {
            prop_assert!(d.delivered_kwh <= d.need_kwh);
        }
    }

    #[test]
    fn replay_reproduces_totals(spec in small_spec(), sched in sched()) {
        let s = generate(&spec).unwrap();
        let r = run(&s, &RunOptions::new(sched)).unwrap();
        prop_assert_eq!(replay(&s, &r.decisions).unwrap().to_bits(), r.total_loss.to_bits());
        let sum: f64 = r.devices.iter().map(|d| d.total_loss).sum();
        prop_assert_eq!(sum.to_bits(), r.total_loss.to_bits());
    }

    #[test]
    fn transits_are_exclusive_and_exact(spec in small_spec()) {
        let s = generate(&GenSpec { mobile_fraction: 1.0, ..spec }).unwrap();
        let r = run(&s, &RunOptions::new(SchedulerId::Heuristic)).unwrap();
        for k in 0..s.devices.len() {
            let row: Vec<Action> = r.decisions[k * s.config.horizon_slots..(k + 1) * s.config.horizon_slots].iter().map(|d| d.action).collect();
            let mut t = 0;
            while t < row.len() {
                if let Action::Move { from, to } = row[t] {
                    let delay = s.config.movement.get(from, to).unwrap().delay;
                    let end = (t + delay).min(row.len());
                    for a in &row[t..end] {
                        prop_assert_eq!(*a, Action::Move { from, to });
                    }
                    t = end;
                    if t < row.len() {
                        prop_assert_ne!(row[t], Action::Move { from, to });
                    }
                } else {
                    t += 1;
                }
            }
        }
    }

    #[test]
    fn decisions_never_look_ahead(spec in small_spec(), arrival in 1usize..40, sched in sched()) {
        let s = generate(&spec).unwrap();
        let base = run(&s, &RunOptions::new(sched)).unwrap();
        let mut later = s.clone();
        later.devices.push(DeviceRequest {
            id: DeviceId(later.devices.len() as u32),
            arrival_slot: arrival,
            deadline_slot: arrival + 5,
            mobile: true,
            initial_energy_kwh: 1.0,
            demand_kwh: 40.0,
            criticality: 2.0,
            power_modes_kw: PowerModeSet::new(vec![10.0, 20.0]),
            home: AggregatorId(0),
            source: None,
        });
        let other = run(&later, &RunOptions::new(sched)).unwrap();
        let tau = s.config.horizon_slots;
        for k in 0..s.devices.len() {
            for t in 0..arrival {
                prop_assert_eq!(base.decisions[k * tau + t], other.decisions[k * tau + t]);
            }
        }
    }

    #[test]
    fn exact_is_a_lower_bound_for_any_feasible_schedule(seed in 0u64..10_000, draw in any::<u64>()) {
        let s = micro_instance(seed);
        let sol = solve_exact(&ExactInstance::new(s.clone())).unwrap();
        let again = solve_exact(&ExactInstance::new(s.clone())).unwrap();
        prop_assert_eq!(sol.loss.to_bits(), again.loss.to_bits());
        prop_assert_eq!(replay(&s, &sol.decisions).unwrap().to_bits(), sol.loss.to_bits());
        let mut rng = ChaCha8Rng::seed_from_u64(draw);
        for _ in 0..20 {
            let sched = random_schedule(&s, &mut rng);
            if validate_schedule(&sched, &s.config, &s.devices).unwrap().all_passed() {
                prop_assert!(sol.loss <= replay(&s, &sched).unwrap());
            }
        }
    }

    #[test]
    fn corrupting_one_decision_is_caught(seed in 0u64..10_000, pick in any::<u64>(), kind in 0usize..4) {
        let s = generate(&GenSpec::grid(20, CLASS_COMBINATIONS[(seed % 4) as usize], 1.0, seed)).unwrap();
        let r = run(&s, &RunOptions::new(SchedulerId::Heuristic)).unwrap();
        let mut decisions = r.decisions.clone();
        let i = (pick % decisions.len() as u64) as usize;
        let d = decisions[i];
        let k = s.device_index(d.device).unwrap();
        let req = &s.devices[k];
        let home = AggregatorId(0);
        match kind {
            // a mode the device does not have
            0 => decisions[i].action = Action::Serve { mode: req.power_modes_kw.count() + 1, aggregator: home },
            // a self-loop transit
            1 => decisions[i].action = Action::Move { from: home, to: home },
            // a second action for the same device-slot
            2 => decisions.push(SlotDecision { action: Action::Idle, ..d }),
            // service somewhere the device is not
            _ => {
                let tau = s.config.horizon_slots;
                let mut st = DeviceState::new(req.clone());
                for t in 0..d.slot {
                    advance(&mut st, r.decisions[k * tau + t].action, t, &s.config).unwrap();
                }
                let here = st.cluster().unwrap_or(req.home);
                let elsewhere = AggregatorId((here.0 + 1) % s.config.num_aggregators);
                decisions[i].action = Action::Serve { mode: 1, aggregator: elsewhere };
            }
        }
        let report = validate_schedule(&decisions, &s.config, &s.devices).unwrap();
        prop_assert!(!report.all_passed());
        prop_assert!(report.failed().all(|c| c.witness.is_some()));
    }
}

#[test]
fn engine_schedules_pass_validation_on_micro_corpus() {
    for seed in 0..200 {
        let s = micro_instance(seed);
        for sched in SchedulerId::ALL {
            for mobility in [false, true] {
                let r = run(&s, &RunOptions { scheduler: sched, mobility: Some(mobility), parallel: false }).unwrap();
                assert!(validate_schedule(&r.decisions, &s.config, &s.devices).unwrap().all_passed());
            }
        }
    }
}

#[test]
fn completed_devices_drop_out_of_the_cluster() {
    let s = generate(&GenSpec::grid(20, CLASS_COMBINATIONS[0], 0.0, 1)).unwrap();
    let r = run(&s, &RunOptions::new(SchedulerId::Heuristic)).unwrap();
    let tau = s.config.horizon_slots;
    for (k, dev) in r.devices.iter().enumerate() {
        if dev.delivered_kwh >= dev.need_kwh {
            let row = &r.decisions[k * tau..(k + 1) * tau];
            let done = row.iter().rposition(|d| matches!(d.action, Action::Serve { .. })).unwrap();
            assert!(row[done + 1..].iter().all(|d| d.action == Action::Idle));
        }
    }
}
