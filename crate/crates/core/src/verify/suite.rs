use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    bregman_project, bregman_project_oracle, exact_value_and_grad, gradient_suite, pmd_guider_step, pmd_guider_step_oracle,
    pmd_equivalence_check, ratio_bound_check, tigerdoor_alt_dynamics, TabularPolicy, TabularPomdp, VerifyError,
};
use crate::envs::EnvConfig;
use crate::objectives::Algorithm;
use crate::rollout::gae;
use crate::trainer::{train, GpoConfig};

pub const CHECK_NAMES: [&str; 9] = [
    "value_grad",
    "pmd_step",
    "bregman",
    "equivalence",
    "equivalence_full_obs",
    "equivalence_tigerdoor_alt",
    "door_dynamics",
    "gae",
    "gradients",
];

/// Names of checks that need a training run.
pub const SLOW_CHECKS: [&str; 1] = ["ratio_bound"];

/// Deliberate defects used to confirm that the suite can fail.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Faults {
    /// Flip the sign of the bootstrap term inside GAE.
    pub gae_sign: bool,
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    /// Random instances for the mirror-descent equivalence check.
    pub instances: usize,
    /// Random (net, batch) seeds per loss in the gradient check.
    pub grad_seeds: usize,
    pub skip: Vec<String>,
    pub faults: Faults,
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            instances: 50,
            grad_seeds: 100,
            skip: Vec::new(),
            faults: Faults::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type CheckResult = Result<(bool, String), VerifyError>;

pub fn run_suite(opts: &SuiteOptions) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let all = CHECK_NAMES.iter().chain(SLOW_CHECKS.iter());
    for &name in all {
        if opts.skip.iter().any(|s| s == name) {
            continue;
        }
        let start = Instant::now();
        let result = match name {
            "value_grad" => check_value_grad(opts.seed),
            "pmd_step" => check_pmd_step(opts.seed),
            "bregman" => check_bregman(opts.seed),
            "equivalence" => check_pmd_equivalence(opts.instances, opts.seed),
            "equivalence_full_obs" => check_pmd_equivalence_full_obs(opts.seed),
            "equivalence_tigerdoor_alt" => check_pmd_equivalence_tigerdoor_alt(),
            "door_dynamics" => Ok(check_door_dynamics()),
            "gae" => Ok(check_gae(opts.seed, opts.faults)),
            "gradients" => check_gradients(opts.grad_seeds, opts.seed),
            "ratio_bound" => check_ratio_bound(opts.seed),
            _ => unreachable!("listed check"),
        };
        let (passed, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
        out.push(CheckOutcome {
            name,
            passed,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    out
}

fn check_value_grad(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x11);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let ns = rng.random_range(2..=6);
        let na = rng.random_range(2..=4);
        let m = TabularPomdp::random(&mut rng, ns, 1, na, 0.9)?;
        let pi = TabularPolicy::random(&mut rng, ns, na);
        worst = worst.max(value_grad_fd_error(&m, &pi)?);
    }
    Ok((worst < 1e-6, format!("max |fd - grad| = {worst:.2e}")))
}

/// Largest gap between the analytic gradient and central differences along
/// simplex-preserving directions `e_a - e_b` in each state.
pub fn value_grad_fd_error(m: &TabularPomdp, pi: &TabularPolicy) -> Result<f64, VerifyError> {
    let vg = exact_value_and_grad(m, pi)?;
    let h = 1e-6;
    let na = m.n_actions;
    let mut worst: f64 = 0.0;
    for s in 0..m.n_states {
        for a in 0..na {
            let b = (a + 1) % na;
            let shifted = |sign: f64| -> Result<f64, VerifyError> {
                let mut rows = pi.rows();
                rows[s][a] += sign * h;
                rows[s][b] -= sign * h;
                exact_value_and_grad(m, &TabularPolicy::from_rows(na, &rows)?).map(|v| v.objective)
            };
            let fd = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * h);
            let analytic = vg.grad[s * na + a] - vg.grad[s * na + b];
            worst = worst.max((fd - analytic).abs());
        }
    }
    Ok(worst)
}

fn check_pmd_step(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x22);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let m = TabularPomdp::random(&mut rng, 3, 2, 2, 0.9)?;
        let pi = TabularPolicy::random(&mut rng, 3, 2).lift(&m);
        let eta = rng.random_range(0.01..0.5);
        worst = worst.max(pmd_guider_step(&m, &pi, eta)?.max_abs_diff(&pmd_guider_step_oracle(&m, &pi, eta)?));
    }
    Ok((worst < 1e-8, format!("closed form vs Newton oracle {worst:.2e}")))
}

fn check_bregman(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x33);
    let mut worst: f64 = 0.0;
    let mut aliased_rows_identical = true;
    for _ in 0..20 {
        let ns = rng.random_range(3..=6);
        let m = TabularPomdp::random(&mut rng, ns, 2, 3, 0.9)?;
        let mu = TabularPolicy::random(&mut rng, ns, 3);
        let weights = exact_value_and_grad(&m, &mu)?.occupancy;
        let prior = TabularPolicy::uniform(2, 3);
        let closed = bregman_project(&m, &mu, &weights, &prior)?;
        worst = worst.max(closed.max_abs_diff(&bregman_project_oracle(&m, &mu, &weights, &prior)?));
        let lifted = closed.lift(&m);
        for s in 0..ns {
            aliased_rows_identical &= lifted.row(s) == closed.row(m.omega[s]);
        }
    }
    Ok((
        worst < 1e-8 && aliased_rows_identical,
        format!("closed form vs Newton oracle {worst:.2e}"),
    ))
}

fn check_pmd_equivalence(instances: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x44);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let ns = rng.random_range(3..=6);
        let no = rng.random_range(2..ns);
        let na = rng.random_range(2..=4);
        let m = TabularPomdp::random(&mut rng, ns, no, na, 0.9)?;
        let pi0 = TabularPolicy::random(&mut rng, no, na);
        worst = worst.max(pmd_equivalence_check(&m, &pi0, 0.1, 50)?.max_deviation);
    }
    Ok((worst < 1e-6, format!("{instances} instances, max deviation {worst:.2e}")))
}

fn check_pmd_equivalence_full_obs(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let m = TabularPomdp::random(&mut rng, 4, 4, 3, 0.9)?.fully_observable();
        let pi0 = TabularPolicy::random(&mut rng, 4, 3);
        worst = worst.max(pmd_equivalence_check(&m, &pi0, 0.1, 50)?.max_deviation);
    }
    Ok((worst < 1e-10, format!("max deviation {worst:.2e}")))
}

fn check_pmd_equivalence_tigerdoor_alt() -> CheckResult {
    let m = TabularPomdp::tigerdoor_alt(0.99);
    let r = pmd_equivalence_check(&m, &TabularPolicy::uniform(2, 2), 1.0, 30)?;
    let value = *r.values.last().unwrap_or(&f64::NAN);
    let left = r.final_direct.get(0, 0).min(r.final_two_stage.get(0, 0));
    Ok((
        r.max_deviation < 1e-6 && value > 0.9999 && left > 0.9999,
        format!("value {value:.6}, pi(a_L) {left:.6}, deviation {:.2e}", r.max_deviation),
    ))
}

fn check_door_dynamics() -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for eta in [0.01, 0.05, 0.1] {
        let d = tigerdoor_alt_dynamics(2000, eta);
        ok &= d.p_exceeds_q() && d.strictly_increasing() && d.final_left() > 0.99;
        parts.push(format!("eta {eta}: {:.4}", d.final_left()));
    }
    (ok, parts.join(", "))
}

/// `sum_l (gamma lambda)^l delta_{t+l}` summed directly up to the episode end.
pub fn gae_direct_sum(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let next_value = |t: usize| if t + 1 < n { values[t + 1] } else { bootstrap };
    let delta = |t: usize| rewards[t] + if dones[t] { 0.0 } else { gamma * next_value(t) } - values[t];
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            let mut w = 1.0;
            for l in t..n {
                total += w * delta(l);
                if dones[l] {
                    break;
                }
                w *= gamma * lambda;
            }
            total
        })
        .collect()
}

/// GAE with the sign of the bootstrap term flipped.
fn faulty_gae(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let live = if dones[t] { 0.0 } else { 1.0 };
        acc = rewards[t] - gamma * live * next - values[t] + gamma * lambda * live * acc;
        out[t] = acc;
    }
    out
}

fn check_gae(seed: u64, faults: Faults) -> (bool, String) {
    let under_test: fn(&[f64], &[f64], &[bool], f64, f64, f64) -> Vec<f64> = if faults.gae_sign { faulty_gae } else { gae };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x66);
    let (mut oracle_gap, mut mc_gap): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let n = rng.random_range(1..=40);
        let rewards: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut dones: Vec<bool> = (0..n).map(|_| rng.random_bool(0.15)).collect();
        let bootstrap: f64 = rng.sample(StandardNormal);
        let gamma = rng.random_range(0.8..1.0);
        let lambda = rng.random_range(0.0..=1.0);
        let got = under_test(&rewards, &values, &dones, bootstrap, gamma, lambda);
        let want = gae_direct_sum(&rewards, &values, &dones, bootstrap, gamma, lambda);
        for (a, b) in got.iter().zip(&want) {
            oracle_gap = oracle_gap.max((a - b).abs());
        }

        dones[n - 1] = true;
        let adv = under_test(&rewards, &values, &dones, bootstrap, gamma, 1.0);
        let mut ret = 0.0;
        for t in (0..n).rev() {
            if dones[t] {
                ret = 0.0;
            }
            ret = rewards[t] + gamma * ret;
            mc_gap = mc_gap.max((adv[t] - (ret - values[t])).abs());
        }
    }
    (
        oracle_gap < 1e-12 && mc_gap < 1e-10,
        format!("direct-sum gap {oracle_gap:.2e}, Monte-Carlo gap {mc_gap:.2e}"),
    )
}

fn check_gradients(n_seeds: usize, seed: u64) -> CheckResult {
    let checks = gradient_suite(n_seeds, seed).map_err(|e| VerifyError::Invalid(e.to_string()))?;
    let worst = checks.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)).expect("non-empty suite");
    let checked: usize = checks.iter().map(|c| c.checked).sum();
    let skipped: usize = checks.iter().map(|c| c.skipped).sum();
    Ok((
        worst.rel_error < 1e-4,
        format!(
            "{} cases, worst {:.2e} ({} seed {}), {checked} coords, {skipped} skipped",
            checks.len(),
            worst.rel_error,
            worst.algorithm,
            worst.seed
        ),
    ))
}

/// Config of the instrumented run behind the ratio-bound check.
pub fn ratio_bound_config(seed: u64) -> GpoConfig {
    GpoConfig {
        total_timesteps: 100_000,
        seed,
        ..GpoConfig::didactic(Algorithm::GpoPenalty, EnvConfig::TigerDoor).desk()
    }
}

fn check_ratio_bound(seed: u64) -> CheckResult {
    let cfg = ratio_bound_config(seed);
    let out = train(&cfg).map_err(|e| VerifyError::Invalid(e.to_string()))?;
    let r = ratio_bound_check(&out.log.records, cfg.clip_eps, cfg.kl_threshold, super::RATIO_BOUND_SLACK);
    Ok((
        r.violation_rate <= 0.05,
        format!(
            "{} / {} iterations above {:.4}, max {:.4}",
            r.violations, r.iterations, r.bound, r.max_deviation
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_sum_handles_truncation() {
        let a = gae_direct_sum(&[1.0, 1.0], &[0.0, 0.0], &[false, false], 2.0, 0.5, 1.0);
        assert_eq!(a, vec![1.0 + 0.5 * (1.0 + 0.5 * 2.0), 1.0 + 0.5 * 2.0]);
    }

    #[test]
    fn faulty_gae_differs() {
        let r = [1.0, 0.5, -0.2];
        let v = [0.3, -0.4, 0.9];
        let d = [false, false, false];
        assert_ne!(faulty_gae(&r, &v, &d, 0.7, 0.9, 0.95), gae(&r, &v, &d, 0.7, 0.9, 0.95));
    }
}
