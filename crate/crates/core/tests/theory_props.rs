use pasf_core::theory::{
    avg_tv, check_performance_difference, check_occupancy_shift, check_generalization_bound, d_pidpi, joint_occupancy, objective, occupancy,
    optimal_invariant_policy, random_instance, random_policy, FiniteGbmdp, InstanceSpec, PolicyClass,
    BoundOptions, TabularPolicy,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-9;

fn instance(seed: u64, envs: usize) -> (FiniteGbmdp, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = InstanceSpec { envs, ..InstanceSpec::default() };
    let fg = random_instance(&spec, &mut rng).unwrap();
    (fg, rng)
}

fn policies(fg: &FiniteGbmdp, rng: &mut ChaCha8Rng, k: usize, invariant: bool) -> Vec<TabularPolicy> {
    (0..k).map(|i| random_policy(fg, invariant, i % 2 == 0, rng).unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn occupancies_are_distributions(seed in any::<u64>(), envs in 1usize..4) {
        let (fg, mut rng) = instance(seed, envs);
        let pi = random_policy(&fg, false, false, &mut rng).unwrap();
        for e in 0..fg.n_envs {
            for gi in 0..fg.n_goals() {
                let d = occupancy(&fg, &pi, e, gi).unwrap();
                prop_assert!(d.iter().all(|&x| x >= -EPS));
                prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            let joint = joint_occupancy(&fg, &pi, e).unwrap();
            prop_assert!((joint.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let j = objective(&fg, &pi, e).unwrap();
            prop_assert!((-EPS..=1.0 + EPS).contains(&j));
        }
    }

    #[test]
    fn average_tv_is_bounded_and_reflexive(seed in any::<u64>()) {
        let (fg, mut rng) = instance(seed, 2);
        let ps = policies(&fg, &mut rng, 3, false);
        let rho = joint_occupancy(&fg, &ps[0], 1).unwrap();
        prop_assert!(avg_tv(&rho, &ps[1], &ps[1]).unwrap().abs() < EPS);
        let d = avg_tv(&rho, &ps[1], &ps[2]).unwrap();
        prop_assert!((-EPS..=1.0 + EPS).contains(&d));
        prop_assert!((d - avg_tv(&rho, &ps[2], &ps[1]).unwrap()).abs() < EPS);
    }

    #[test]
    fn performance_difference_bound_holds(seed in any::<u64>(), envs in 1usize..3) {
        let (fg, mut rng) = instance(seed, envs);
        let ps = policies(&fg, &mut rng, 2, false);
        for e in 0..fg.n_envs {
            let ineq = check_performance_difference(&fg, e, &ps[0], &ps[1]).unwrap();
            prop_assert!(ineq.holds, "lhs {} rhs {}", ineq.lhs, ineq.rhs);
        }
    }

    #[test]
    fn occupancy_shift_bound_holds(seed in any::<u64>()) {
        let (fg, mut rng) = instance(seed, 1);
        let ps = policies(&fg, &mut rng, 2, true);
        let shift = check_occupancy_shift(&fg, 0, &ps[0], &ps[1]).unwrap();
        prop_assert!(shift.holds());
    }

    #[test]
    fn class_divergence_is_a_pseudometric(seed in any::<u64>()) {
        let (fg, mut rng) = instance(seed, 3);
        let class = PolicyClass::new(policies(&fg, &mut rng, 4, false)).unwrap();
        let pi = random_policy(&fg, false, false, &mut rng).unwrap();
        let rhos: Vec<_> = (0..3).map(|e| joint_occupancy(&fg, &pi, e).unwrap()).collect();
        let d = |a: usize, b: usize| d_pidpi(&rhos[a], &rhos[b], &class).unwrap();
        prop_assert!(d(0, 0).abs() < EPS);
        prop_assert!((d(0, 1) - d(1, 0)).abs() < EPS);
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + EPS);
        prop_assert!((-EPS..=1.0 + EPS).contains(&d(0, 1)));
    }

    #[test]
    fn value_iteration_beats_random_policies(seed in any::<u64>()) {
        let (fg, mut rng) = instance(seed, 1);
        let best = objective(&fg, &optimal_invariant_policy(&fg).unwrap(), 0).unwrap();
        for p in policies(&fg, &mut rng, 6, true) {
            prop_assert!(objective(&fg, &p, 0).unwrap() <= best + 1e-7);
        }
    }

    #[test]
    fn generalization_bound_holds(seed in any::<u64>(), k in 1usize..6) {
        let (fg, mut rng) = instance(seed, 3);
        let mut members = policies(&fg, &mut rng, k, false);
        let pi = members[0].clone();
        members.push(optimal_invariant_policy(&fg).unwrap());
        let class = PolicyClass::new(members).unwrap();
        let pi_g = optimal_invariant_policy(&fg).unwrap();
        let report = check_generalization_bound(&fg, &class, &pi, &pi_g, &[0, 1], 2, BoundOptions::default()).unwrap();
        prop_assert!(report.holds, "gap {} bound {}", report.gap, report.bound);
        prop_assert!(report.gap <= report.bound + 1e-9);
    }
}
