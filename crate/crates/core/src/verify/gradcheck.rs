use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::nn::{guider_input, learner_input, rows_to_matrix, Action, ActionBatch, Activation, Head, NetShape, ParamVector, PolicyNet};
use crate::objectives::{evaluate, Algorithm, InnerClip, LossConfig, MaskMode, MiniBatch, ObjectiveError};
use crate::rollout::Behavior;

/// Result of one central-difference comparison.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub algorithm: Algorithm,
    pub seed: u64,
    /// `|g_fd - g| / max(|g_fd| + |g|, 1e-12)` over compared coordinates.
    pub rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a clip or min boundary.
    pub skipped: usize,
}

/// Compares the analytic gradient of `evaluate` against central differences.
/// The stop-gradient side is pinned to `params` while perturbing, so the
/// numeric derivative sees the same frozen targets as the analytic one.
pub fn fd_check(
    algo: Algorithm,
    cfg: &LossConfig,
    alpha: f64,
    net: &PolicyNet,
    params: &ParamVector,
    mb: &MiniBatch,
    h: f64,
) -> Result<(f64, usize, usize), ObjectiveError> {
    let base = evaluate(algo, cfg, alpha, net, params, mb, Some(params), true)?;
    let g = base.grad.expect("gradient requested");
    let (mut diff, mut norm) = (0.0, 0.0);
    let (mut checked, mut skipped) = (0, 0);
    let mut shifted = params.clone();
    for i in 0..params.len() {
        shifted.0[i] = params.0[i] + h;
        let up = evaluate(algo, cfg, alpha, net, &shifted, mb, Some(params), false)?;
        shifted.0[i] = params.0[i] - h;
        let dn = evaluate(algo, cfg, alpha, net, &shifted, mb, Some(params), false)?;
        shifted.0[i] = params.0[i];
        if up.branch_hash != base.branch_hash || dn.branch_hash != base.branch_hash {
            skipped += 1;
            continue;
        }
        let fd = (up.breakdown.total - dn.breakdown.total) / (2.0 * h);
        diff += (fd - g[i]).powi(2);
        norm += fd.powi(2) + g[i].powi(2);
        checked += 1;
    }
    let rel = diff.sqrt() / norm.sqrt().max(1e-12);
    Ok((rel, checked, skipped))
}

/// A small random network, parameters and minibatch.
pub struct GradCase {
    pub net: PolicyNet,
    pub params: ParamVector,
    pub batch: MiniBatch,
    pub cfg: LossConfig,
    pub alpha: f64,
}

pub fn random_case(algo: Algorithm, seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state_dim = rng.random_range(1..=3);
    let obs_dim = rng.random_range(1..=3);
    let head = if rng.random_bool(0.6) {
        Head::Categorical { n_actions: rng.random_range(2..=4) }
    } else {
        Head::DiagGaussian { action_dim: rng.random_range(1..=2) }
    };
    let width = rng.random_range(3..=6);
    let depth = rng.random_range(1..=2);
    let activation = [Activation::LeakyRelu, Activation::Tanh, Activation::Silu][rng.random_range(0..3)];
    let shape = NetShape {
        hidden: vec![width; depth],
        value_hidden: vec![width; depth],
        activation,
    };
    let net = PolicyNet::new(state_dim, obs_dim, head, &shape, true).expect("valid shape");
    let mut params = net.init(&mut rng);
    for p in params.0.iter_mut() {
        *p += 0.3 * rng.sample::<f64, _>(StandardNormal);
    }

    let n = rng.random_range(6..=12);
    let (mut g_rows, mut l_rows) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let s: Vec<f64> = (0..state_dim).map(|_| rng.sample(StandardNormal)).collect();
        let o: Vec<f64> = (0..obs_dim).map(|_| rng.sample(StandardNormal)).collect();
        g_rows.push(guider_input(&s, &o));
        l_rows.push(learner_input(state_dim, &o));
    }
    let guider_obs = rows_to_matrix(&g_rows);
    let learner_obs = rows_to_matrix(&l_rows);
    let alpha = rng.random_range(0.5..2.0);
    let cfg = LossConfig {
        inner: if rng.random_bool(0.5) { InnerClip::Ratio(1.1) } else { InnerClip::Delta(0.3) },
        entropy_coef: 0.01,
        value_coef: 0.5,
        a2d_lambda: rng.random_range(0.0..1.0),
        mask: MaskMode::Computed,
        ..LossConfig::default()
    };

    let behavior_in = match algo.behavior(cfg.a2d_lambda) {
        Behavior::Guider => &guider_obs,
        _ => &learner_obs,
    };
    let dists = net.policy_dists(&params, behavior_in.view()).expect("finite forward");
    let sampled: Vec<Action> = dists.iter().map(|d| d.sample(&mut rng)).collect();
    let behavior_logprob = dists
        .iter()
        .zip(&sampled)
        .map(|(d, a)| d.log_prob(a).expect("matching head") + 0.25 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let actions = ActionBatch::from_actions(&sampled).expect("one head");
    let batch = MiniBatch {
        guider_obs,
        learner_obs,
        actions,
        behavior_logprob,
        advantages: (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        returns: (0..n).map(|_| rng.sample(StandardNormal)).collect(),
    };
    GradCase {
        net,
        params,
        batch,
        cfg,
        alpha,
    }
}

/// Every algorithm's loss on `n_seeds` random cases.
pub fn gradient_suite(n_seeds: usize, base_seed: u64) -> Result<Vec<GradCheck>, ObjectiveError> {
    let mut out = Vec::with_capacity(n_seeds * Algorithm::ALL.len());
    for k in 0..n_seeds as u64 {
        for (j, &algo) in Algorithm::ALL.iter().enumerate() {
            let seed = base_seed.wrapping_add(k * 97 + j as u64);
            let case = random_case(algo, seed);
            let (rel_error, checked, skipped) = fd_check(algo, &case.cfg, case.alpha, &case.net, &case.params, &case.batch, 1e-6)?;
            out.push(GradCheck {
                algorithm: algo,
                seed,
                rel_error,
                checked,
                skipped,
            });
        }
    }
    Ok(out)
}
