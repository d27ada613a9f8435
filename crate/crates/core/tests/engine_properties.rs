//! Run-level invariants of the elimination engine.

use fedelim::instance::Pool;
use fedelim::stream::InstanceSource;
use fedelim::{run, Engine, ProblemInstance, RunConfig, Schedule};
use proptest::prelude::*;

fn schedule_strategy() -> impl Strategy<Value = Schedule> {
    prop_oneof![
        Just(Schedule::EveryStep),
        (1.05f64..4.0).prop_map(|b| Schedule::exponential(b).unwrap()),
        (1u64..50, 1u64..10).prop_map(|(h, o)| Schedule::periodic(h, o).unwrap()),
        Just(Schedule::super_exponential()),
    ]
}

fn wide_instance() -> impl Strategy<Value = ProblemInstance> {
    (2usize..4, 1usize..4).prop_flat_map(|(k, m)| {
        proptest::collection::vec(proptest::collection::vec(0.0f64..4.0, m), k)
            .prop_filter_map("unique best arms", |means| {
                let inst = ProblemInstance::gaussian(means).ok()?;
                inst.validate().is_ok().then_some(inst)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sets_only_shrink_and_declarations_stick(
        inst in wide_instance(),
        schedule in schedule_strategy(),
        seed in any::<u64>(),
    ) {
        let config = RunConfig::new(0.1, schedule).with_cost(1.0).with_seed(seed, 0);
        let mut engine = Engine::new(&inst, config, InstanceSource::new(&inst, seed, 0));
        let m = inst.num_clients();
        let mut prev_local: Vec<Vec<usize>> = (0..m).map(|c| engine.local_active(c).to_vec()).collect();
        let mut prev_global = engine.global_active().to_vec();
        let mut prev_decl = engine.local_declarations().to_vec();
        let mut prev_pulls = 0;
        for _ in 0..2000 {
            // pulls this step: |S_l,m ∪ S_g| per client when that exceeds one
            let expected: u64 = (0..m)
                .map(|c| {
                    let mut u: Vec<usize> = prev_local[c].iter().chain(&prev_global).copied().collect();
                    u.sort();
                    u.dedup();
                    if u.len() > 1 { u.len() as u64 } else { 0 }
                })
                .sum();
            let done = engine.step();
            prop_assert_eq!(engine.total_pulls() - prev_pulls, expected);
            prev_pulls = engine.total_pulls();
            for c in 0..m {
                let now = engine.local_active(c);
                prop_assert!(now.iter().all(|a| prev_local[c].contains(a)));
                if let Some(d) = prev_decl[c] {
                    prop_assert_eq!(engine.local_declarations()[c], Some(d));
                }
                prev_local[c] = now.to_vec();
            }
            prop_assert!(engine.global_active().iter().all(|a| prev_global.contains(a)));
            prev_global = engine.global_active().to_vec();
            prev_decl = engine.local_declarations().to_vec();
            if done {
                break;
            }
        }
    }

    #[test]
    fn cost_only_scales_communication(
        inst in wide_instance(),
        schedule in schedule_strategy(),
        seed in any::<u64>(),
        cost in 0.0f64..1000.0,
    ) {
        let base = RunConfig::new(0.1, schedule).with_seed(seed, 1);
        let free = run(&inst, &base.clone()).unwrap();
        let paid = run(&inst, &base.with_cost(cost)).unwrap();
        prop_assert_eq!(&free.pull_counts, &paid.pull_counts);
        prop_assert_eq!(free.comm_rounds.clone(), paid.comm_rounds.clone());
        prop_assert_eq!(paid.comm_cost, cost * paid.comm_scalars as f64);
        prop_assert_eq!(paid.total_cost, paid.total_pulls as f64 + paid.comm_cost);
        let scalars: u64 = paid.comm_rounds.iter().map(|r| (inst.num_clients() * r.active) as u64).sum();
        prop_assert_eq!(scalars, paid.comm_scalars);
        prop_assert!(paid.comm_rounds.iter().all(|r| schedule.is_comm_step(r.step) && r.active > 1));
    }

    #[test]
    fn noiseless_pools_are_identified(
        means in proptest::collection::vec(proptest::collection::vec(0u8..20, 2), 3),
        schedule in schedule_strategy(),
    ) {
        let means: Vec<Vec<f64>> = means.iter().map(|r| r.iter().map(|&v| v as f64 / 2.0).collect()).collect();
        let pools: Vec<Vec<Pool>> = means
            .iter()
            .map(|r| r.iter().map(|&v| Pool::new(vec![v]).unwrap()).collect())
            .collect();
        let inst = ProblemInstance::empirical(pools).unwrap();
        prop_assume!(inst.validate().is_ok());
        let truth = inst.best_arms().unwrap();
        let a = run(&inst, &RunConfig::new(0.05, schedule).with_seed(1, 0)).unwrap();
        let b = run(&inst, &RunConfig::new(0.05, schedule).with_seed(2, 0)).unwrap();
        prop_assert!(a.is_correct(&truth));
        prop_assert!(a.event_e_holds);
        prop_assert_eq!(a.total_pulls, b.total_pulls);
        prop_assert_eq!(a.stop_step, b.stop_step);
    }
}

#[test]
fn gaussian_builtin_doubling_run() {
    let inst = ProblemInstance::synthetic_gaussian();
    let truth = inst.best_arms().unwrap();
    let r = run(&inst, &RunConfig::new(0.01, Schedule::exponential(2.0).unwrap()).with_cost(10.0).with_seed(7, 0)).unwrap();
    assert!(r.is_correct(&truth));
    assert_eq!(r.declarations_string(), "1 2 3|4");
    // the server only decides at powers of two
    assert!(r.stop_step.is_power_of_two());
    assert!(r.comm_rounds.iter().all(|c| c.step.is_power_of_two()));
}

#[test]
fn superexp_without_first_step_skips_step_one() {
    let inst = ProblemInstance::synthetic_gaussian();
    let sched: Schedule = "superexp:nofirst".parse().unwrap();
    let r = run(&inst, &RunConfig::new(0.1, sched).with_seed(3, 0)).unwrap();
    assert_eq!(r.comm_rounds.first().map(|c| c.step), Some(2));
}
