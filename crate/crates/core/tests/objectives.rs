use gpo_core::nn::{ActionDist, ParamVector};
use gpo_core::objectives::{
    backtrack_mask, bc_kl, double_clip_ratio, evaluate, halting_conditions_hold, ppo_surrogate, Algorithm, AlphaState, InnerClip, LossBreakdown,
    LossConfig, MaskMode, MiniBatch, ALPHA_MAX, ALPHA_MIN,
};
use gpo_core::rollout::take_rows;
use gpo_core::verify::{fd_check, random_case, GradCase};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn row_batch(mb: &MiniBatch, idx: &[usize]) -> MiniBatch {
    MiniBatch {
        guider_obs: take_rows(&mb.guider_obs, idx),
        learner_obs: take_rows(&mb.learner_obs, idx),
        actions: mb.actions.select(idx),
        behavior_logprob: idx.iter().map(|&i| mb.behavior_logprob[i]).collect(),
        advantages: idx.iter().map(|&i| mb.advantages[i]).collect(),
        returns: idx.iter().map(|&i| mb.returns[i]).collect(),
    }
}

fn log_probs(case: &GradCase, guider: bool) -> Vec<f64> {
    let inputs = if guider { &case.batch.guider_obs } else { &case.batch.learner_obs };
    let dists = case.net.policy_dists(&case.params, inputs.view()).unwrap();
    dists.iter().enumerate().map(|(i, d)| d.log_prob(&case.batch.actions.get(i)).unwrap()).collect()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn parts(b: &LossBreakdown) -> [f64; 8] {
    [b.guider_rl, b.guider_backtrack, b.learner_rl, b.learner_bc, b.aux_bc, b.value_mse, b.entropy, b.total]
}

#[test]
fn clip_without_inner_interval_equals_penalty() {
    for seed in 0..200 {
        let case = random_case(Algorithm::GpoClip, seed);
        let clip_cfg = LossConfig { inner: InnerClip::Delta(f64::INFINITY), mask: MaskMode::ForceOn, ..case.cfg.clone() };
        let clip = evaluate(Algorithm::GpoClip, &clip_cfg, 1.0, &case.net, &case.params, &case.batch, None, true).unwrap();
        let pen = evaluate(Algorithm::GpoPenalty, &case.cfg, 1.0, &case.net, &case.params, &case.batch, None, true).unwrap();
        for (a, b) in parts(&clip.breakdown).iter().zip(parts(&pen.breakdown)) {
            assert!(close(*a, b, 1e-12), "seed {seed}: {a} vs {b}");
        }
        for (a, b) in clip.grad.unwrap().iter().zip(pen.grad.unwrap()) {
            assert!(close(*a, b, 1e-12), "seed {seed}: grad {a} vs {b}");
        }
    }
}

/// Rebuilds the behavior log-probabilities as the guider's own plus a
/// perturbation that keeps `rho_mu` inside the outer clip, as at the start
/// of an update from freshly collected data.
fn near_on_policy(case: &mut GradCase, rng: &mut ChaCha8Rng) {
    let eps = case.cfg.clip_eps;
    let lmu = log_probs(case, true);
    case.batch.behavior_logprob = lmu.iter().map(|l| l - rng.random_range((1.0 - eps).ln() * 0.9..(1.0 + eps).ln() * 0.9)).collect();
}

#[test]
fn halting_samples_have_zero_guider_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut halted = 0;
    let h = 1e-6;
    for seed in 0..300 {
        let mut case = random_case(Algorithm::GpoClip, seed);
        near_on_policy(&mut case, &mut rng);
        let (lmu, lpi) = (log_probs(&case, true), log_probs(&case, false));
        for i in 0..case.batch.len() {
            let (mu, pi, adv) = (lmu[i].exp(), lpi[i].exp(), case.batch.advantages[i]);
            if !halting_conditions_hold(mu, pi, adv, case.cfg.inner) {
                continue;
            }
            halted += 1;
            let one = row_batch(&case.batch, &[i]);
            let base = evaluate(Algorithm::GpoClip, &case.cfg, case.alpha, &case.net, &case.params, &one, Some(&case.params), false).unwrap();
            let mut shifted = case.params.clone();
            for k in 0..case.params.len() {
                shifted.0[k] = case.params.0[k] + h;
                let up = evaluate(Algorithm::GpoClip, &case.cfg, case.alpha, &case.net, &shifted, &one, Some(&case.params), false).unwrap();
                shifted.0[k] = case.params.0[k] - h;
                let dn = evaluate(Algorithm::GpoClip, &case.cfg, case.alpha, &case.net, &shifted, &one, Some(&case.params), false).unwrap();
                shifted.0[k] = case.params.0[k];
                if up.branch_hash != base.branch_hash || dn.branch_hash != base.branch_hash {
                    continue;
                }
                let fd = (up.breakdown.guider_rl - dn.breakdown.guider_rl) / (2.0 * h);
                assert!(fd.abs() < 1e-10, "seed {seed} sample {i} coord {k}: {fd}");
            }
        }
    }
    assert!(halted > 50, "only {halted} halting samples");
}

#[test]
fn halting_with_ratio_below_outer_clip_keeps_gradient() {
    // Positive advantage and mu far above pi, but rho_mu below 1 - eps: the
    // outer min picks the unclipped branch and the guider still moves.
    let inner = InnerClip::Delta(0.1);
    let (mu, pi, beta, adv) = (0.2, 0.1, 0.4, 1.0);
    assert!(halting_conditions_hold(mu, pi, adv, inner));
    let rho = mu / beta;
    let clipped = double_clip_ratio(mu, pi, beta, inner, 0.2).unwrap();
    assert!(rho * adv < clipped * adv);
}

#[test]
fn masked_backtrack_gradient_is_full_kl_on_masked_samples() {
    let mut checked = 0;
    for seed in 0..60 {
        let case = random_case(Algorithm::GpoClip, seed);
        let (lmu, lpi) = (log_probs(&case, true), log_probs(&case, false));
        let masked: Vec<usize> = (0..case.batch.len()).filter(|&i| backtrack_mask(lmu[i].exp(), lpi[i].exp(), case.cfg.inner) == 1.0).collect();
        if masked.is_empty() || masked.len() == case.batch.len() {
            continue;
        }
        checked += 1;
        let computed = evaluate(Algorithm::GpoClip, &case.cfg, 1.0, &case.net, &case.params, &case.batch, None, false).unwrap();
        let g_in = case.net.policy_dists(&case.params, case.batch.guider_obs.view()).unwrap();
        let l_in = case.net.policy_dists(&case.params, case.batch.learner_obs.view()).unwrap();
        let pick = |d: &[ActionDist]| masked.iter().map(|&i| d[i].clone()).collect::<Vec<_>>();
        let expected = bc_kl(&pick(&g_in), &pick(&l_in)).unwrap() * masked.len() as f64 / case.batch.len() as f64;
        assert!(close(computed.breakdown.guider_backtrack, expected, 1e-12), "seed {seed}");
    }
    assert!(checked > 10);
}

#[test]
fn every_loss_passes_finite_differences() {
    for algo in Algorithm::ALL {
        for seed in 0..20 {
            let case = random_case(algo, 1000 + seed);
            let (rel, checked, _) = fd_check(algo, &case.cfg, case.alpha, &case.net, &case.params, &case.batch, 1e-6).unwrap();
            assert!(rel < 1e-4, "{algo} seed {seed}: {rel}");
            assert!(checked > 0);
        }
    }
}

#[test]
fn first_epoch_guider_term_is_negative_mean_advantage() {
    for algo in [Algorithm::GpoPenalty, Algorithm::GpoNaive, Algorithm::PpoBc] {
        let mut case = random_case(algo, 3);
        case.batch.behavior_logprob = log_probs(&case, true);
        let e = evaluate(algo, &case.cfg, 1.0, &case.net, &case.params, &case.batch, None, false).unwrap();
        let mean_adv = case.batch.advantages.iter().sum::<f64>() / case.batch.len() as f64;
        assert!((e.breakdown.guider_rl + mean_adv).abs() < 1e-12, "{algo}");
    }
}

#[test]
fn naive_is_penalty_without_learner_rl() {
    for seed in 0..30 {
        let case = random_case(Algorithm::GpoPenalty, seed);
        let pen = evaluate(Algorithm::GpoPenalty, &case.cfg, case.alpha, &case.net, &case.params, &case.batch, None, false).unwrap().breakdown;
        let naive = evaluate(Algorithm::GpoNaive, &case.cfg, case.alpha, &case.net, &case.params, &case.batch, None, false).unwrap().breakdown;
        assert_eq!(naive.learner_rl, 0.0);
        assert_eq!(naive.guider_rl, pen.guider_rl);
        assert_eq!(naive.guider_backtrack, pen.guider_backtrack);
        assert_eq!(naive.learner_bc, pen.learner_bc);
        assert!((naive.total - (pen.total - pen.learner_rl)).abs() < 1e-12);
    }
}

#[test]
fn asymmetric_ppo_changes_only_the_value_input() {
    for seed in 0..30 {
        let case = random_case(Algorithm::Ppo, seed);
        let cfg = LossConfig { value_coef: 0.0, ..case.cfg.clone() };
        let a = evaluate(Algorithm::Ppo, &cfg, 1.0, &case.net, &case.params, &case.batch, None, true).unwrap();
        let b = evaluate(Algorithm::PpoAsym, &cfg, 1.0, &case.net, &case.params, &case.batch, None, true).unwrap();
        assert_eq!(a.breakdown.learner_rl, b.breakdown.learner_rl);
        assert_eq!(a.breakdown.total, b.breakdown.total);
        assert_eq!(a.grad, b.grad);
    }
}

#[test]
fn advisor_with_aux_equal_to_guider_is_pure_bc() {
    let mut case = random_case(Algorithm::AdvisorCo, 8);
    // zero policy and aux output layers make mu, pi and the aux head all uniform
    let net = &case.net;
    let width = net.policy.head().width();
    let zero_from = net.policy.n_params() - (net.policy.trunk_width() * width + width);
    for k in zero_from..net.policy.n_params() {
        case.params.0[k] = 0.0;
    }
    for k in net.aux_offset()..case.params.len() {
        case.params.0[k] = 0.0;
    }
    let e = evaluate(Algorithm::AdvisorCo, &case.cfg, 1.0, &case.net, &case.params, &case.batch, None, false).unwrap();
    assert_eq!(e.breakdown.learner_rl, 0.0);
    assert!(e.breakdown.aux_bc.abs() < 1e-15);
}

#[test]
fn backtrack_vanishes_inside_the_inner_region() {
    let mut case = random_case(Algorithm::GpoClip, 21);
    let cfg = LossConfig { inner: InnerClip::Delta(1e6), ..case.cfg.clone() };
    case.cfg = cfg;
    let e = evaluate(Algorithm::GpoClip, &case.cfg, 1.0, &case.net, &case.params, &case.batch, None, false).unwrap();
    assert_eq!(e.breakdown.guider_backtrack, 0.0);
    assert_eq!(e.breakdown.inner_clip_fraction, 0.0);
}

#[test]
fn descent_step_lowers_each_loss() {
    for algo in Algorithm::ALL {
        let case = random_case(algo, 500);
        let base = evaluate(algo, &case.cfg, case.alpha, &case.net, &case.params, &case.batch, Some(&case.params), true).unwrap();
        let g = base.grad.unwrap();
        let norm: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        let step = 1e-5 / norm.max(1e-12);
        let moved = ParamVector(case.params.0.iter().zip(&g).map(|(p, g)| p - step * g).collect());
        let after = evaluate(algo, &case.cfg, case.alpha, &case.net, &moved, &case.batch, Some(&case.params), false).unwrap();
        assert!(after.breakdown.total < base.breakdown.total, "{algo}");
    }
}

proptest! {
    #[test]
    fn double_clip_stays_in_outer_interval(mu in 1e-6..1.0f64, pi in 1e-6..1.0f64, beta in 1e-6..1.0f64, d in 0.01..0.5f64, eps in 0.05..0.5f64) {
        let r = double_clip_ratio(mu, pi, beta, InnerClip::Delta(d), eps).unwrap();
        prop_assert!(r >= 1.0 - eps && r <= 1.0 + eps);
        let r = double_clip_ratio(mu, pi, beta, InnerClip::Ratio(1.0 + d), eps).unwrap();
        prop_assert!(r >= 1.0 - eps && r <= 1.0 + eps);
    }

    #[test]
    fn alpha_update_is_monotone(alpha in ALPHA_MIN..ALPHA_MAX, a in 0.0..0.01f64, b in 0.0..0.01f64) {
        let s = AlphaState { alpha, d: 0.001, k: 1.5 };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(s.update(lo).alpha <= s.update(hi).alpha);
        prop_assert!(s.update(hi).alpha <= ALPHA_MAX && s.update(lo).alpha >= ALPHA_MIN);
    }

    #[test]
    fn ppo_surrogate_is_finite_and_bounded(adv in prop::collection::vec(-3.0..3.0f64, 1..20), shift in -0.5..0.5f64) {
        let lp: Vec<f64> = adv.iter().map(|a| -a.abs()).collect();
        let lb: Vec<f64> = lp.iter().map(|l| l + shift).collect();
        let (loss, frac) = ppo_surrogate(&lp, &lb, &adv, 0.2).unwrap();
        prop_assert!(loss.is_finite());
        prop_assert!((0.0..=1.0).contains(&frac));
    }

    #[test]
    fn breakdown_total_is_sum_of_parts(seed in 0u64..10_000, which in 0usize..9) {
        let algo = Algorithm::ALL[which];
        let case = random_case(algo, seed);
        let b = evaluate(algo, &case.cfg, case.alpha, &case.net, &case.params, &case.batch, None, false).unwrap().breakdown;
        let sum = b.guider_rl + b.guider_backtrack + b.learner_rl + b.learner_bc + b.aux_bc + case.cfg.value_coef * b.value_mse - case.cfg.entropy_coef * b.entropy;
        prop_assert!((b.total - sum).abs() < 1e-10);
        prop_assert!(b.is_finite());
    }
}
