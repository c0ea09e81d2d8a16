use gpo_core::verify::{
    bregman_project, bregman_project_oracle, constrained_pmd_oracle, door_dynamics, exact_value_and_grad, pmd_equivalence_check, pmd_guider_step,
    pmd_guider_step_oracle, ratio_bound, run_suite, tigerdoor_alt_dynamics, value_grad_fd_error, SuiteOptions, TabularPolicy, TabularPomdp, CHECK_NAMES,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64) -> TabularPomdp {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = rng.random_range(2..=6);
    let o = rng.random_range(1..=s);
    let a = rng.random_range(2..=4);
    TabularPomdp::random(&mut rng, s, o, a, 0.9).unwrap()
}

#[test]
fn equivalence_on_fifty_random_instances() {
    let start = std::time::Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let m = instance(seed);
        let pi0 = TabularPolicy::uniform(m.n_obs, m.n_actions);
        let r = pmd_equivalence_check(&m, &pi0, 0.1, 50).unwrap();
        worst = worst.max(r.max_deviation);
    }
    assert!(worst < 1e-6, "{worst}");
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn equivalence_fully_observable() {
    for seed in 0..20 {
        let m = instance(seed).fully_observable();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pi0 = TabularPolicy::random(&mut rng, m.n_obs, m.n_actions);
        let r = pmd_equivalence_check(&m, &pi0, 0.1, 50).unwrap();
        assert!(r.max_deviation < 1e-10, "seed {seed}: {}", r.max_deviation);
    }
}

#[test]
fn tigerdoor_alt_equivalence_reaches_the_left_door() {
    let m = TabularPomdp::tigerdoor_alt(0.99);
    let pi0 = TabularPolicy::uniform(m.n_obs, m.n_actions);
    let r = pmd_equivalence_check(&m, &pi0, 1.0, 30).unwrap();
    assert!(r.max_deviation < 1e-6);
    assert!(r.final_direct.get(0, 0) > 0.999);
}

#[test]
fn value_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let m = instance(seed);
        let pi = TabularPolicy::random(&mut ChaCha8Rng::seed_from_u64(seed), m.n_states, m.n_actions);
        let err = value_grad_fd_error(&m, &pi).unwrap();
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn one_state_geometric_value() {
    // single absorbing state paying 1 per step
    let m = TabularPomdp::new(1, 1, 2, vec![1.0, 1.0], vec![1.0, 1.0], vec![0], vec![1.0], 0.5).unwrap();
    let vg = exact_value_and_grad(&m, &TabularPolicy::uniform(1, 2)).unwrap();
    assert!((vg.objective - 2.0).abs() < 1e-14);
}

#[test]
fn door_dynamics_climb_to_the_left() {
    for eta in [0.01, 0.05, 0.1] {
        let d = tigerdoor_alt_dynamics(5000, eta);
        assert!(d.p_exceeds_q(), "eta {eta}");
        assert!(d.strictly_increasing(), "eta {eta}");
        assert!(d.final_left() > 0.99, "eta {eta}: {}", d.final_left());
    }
}

#[test]
fn door_dynamics_follow_the_larger_payoff() {
    let d = door_dynamics([[1.0, 0.0], [0.0, 3.0]], 0.5, 3000, 0.05);
    assert!(d.pi_left.windows(2).all(|w| w[1] < w[0]));
    assert!(d.final_left() < 0.01);
}

#[test]
fn bound_value() {
    assert!((ratio_bound(0.2, 0.001) - (0.2 + 0.002f64.sqrt())).abs() < 1e-15);
}

#[test]
fn suite_passes_and_detects_an_injected_fault() {
    let opts = SuiteOptions { instances: 10, grad_seeds: 5, skip: vec!["ratio_bound".into()], ..SuiteOptions::default() };
    let out = run_suite(&opts);
    assert_eq!(out.len(), CHECK_NAMES.len());
    for c in &out {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
    let mut faulty = opts.clone();
    faulty.faults.gae_sign = true;
    faulty.skip = CHECK_NAMES.iter().chain(&["ratio_bound"]).filter(|n| **n != "gae").map(|n| n.to_string()).collect();
    let out = run_suite(&faulty);
    assert_eq!(out.len(), 1);
    assert!(!out[0].passed);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_forms_match_newton(seed in 0u64..100_000, eta in 0.01..2.0f64) {
        let m = instance(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let pi = TabularPolicy::random(&mut rng, m.n_states, m.n_actions);
        let a = pmd_guider_step(&m, &pi, eta).unwrap();
        let b = pmd_guider_step_oracle(&m, &pi, eta).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-10);

        let weights: Vec<f64> = exact_value_and_grad(&m, &pi).unwrap().occupancy;
        let prior = TabularPolicy::uniform(m.n_obs, m.n_actions);
        let p = bregman_project(&m, &a, &weights, &prior).unwrap();
        let q = bregman_project_oracle(&m, &a, &weights, &prior).unwrap();
        prop_assert!(p.max_abs_diff(&q) < 1e-10);
    }

    #[test]
    fn policies_stay_on_the_simplex(seed in 0u64..100_000, eta in 0.01..2.0f64) {
        let m = instance(seed);
        let pi0 = TabularPolicy::uniform(m.n_obs, m.n_actions);
        let next = constrained_pmd_oracle(&m, &pi0, eta).unwrap();
        for o in 0..m.n_obs {
            let row = next.row(o);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&x| x >= 1e-10));
        }
    }

    #[test]
    fn mirror_step_does_not_lower_the_value(seed in 0u64..100_000) {
        let m = instance(seed);
        let pi = TabularPolicy::uniform(m.n_states, m.n_actions);
        let before = exact_value_and_grad(&m, &pi).unwrap().objective;
        let after = exact_value_and_grad(&m, &pmd_guider_step(&m, &pi, 0.05).unwrap()).unwrap().objective;
        prop_assert!(after >= before - 1e-12);
    }
}
