//! Numerical certificates for the co-training theory on tabular problems,
//! plus the estimator and gradient oracles behind the `verify` command.

mod dynamics;
mod gradcheck;
mod suite;
mod tabular;

pub use dynamics::{door_dynamics, tigerdoor_alt_dynamics, DoorDynamics};
pub use gradcheck::{fd_check, gradient_suite, random_case, GradCase, GradCheck};
pub use suite::{gae_direct_sum, ratio_bound_config, run_suite, value_grad_fd_error, CheckOutcome, Faults, SuiteOptions, CHECK_NAMES, SLOW_CHECKS};
pub use tabular::{
    bregman_project, bregman_project_oracle, constrained_pmd_oracle, exact_value_and_grad, newton_simplex, pmd_equivalence_check,
    pmd_guider_step, pmd_guider_step_oracle, EquivalenceReport, KlLinear, SimplexObjective, TabularPolicy, TabularPomdp, ValueGrad,
    MAX_TABULAR, POLICY_FLOOR,
};

use crate::trainer::TrainRecord;

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("singular Bellman system")]
    Singular,
    #[error("{0}")]
    Invalid(String),
}

/// Absolute slack added to the ratio bound.
pub const RATIO_BOUND_SLACK: f64 = 0.05;

/// `eps + sqrt(2 d)`.
pub fn ratio_bound(eps: f64, d: f64) -> f64 {
    eps + (2.0 * d).sqrt()
}

/// `E_{a ~ beta} |1 - pi(a) / beta(a)|` for two categorical distributions.
pub fn expected_ratio_deviation(pi: &[f64], beta: &[f64]) -> f64 {
    pi.iter().zip(beta).map(|(p, b)| (b - p).abs()).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatioBoundReport {
    pub iterations: usize,
    pub violations: usize,
    pub violation_rate: f64,
    pub bound: f64,
    pub max_deviation: f64,
}

/// Compares each iteration's pre-update `mean |1 - rho_pi|` with
/// `eps + sqrt(2 d) + slack`.
pub fn ratio_bound_check(records: &[TrainRecord], eps: f64, d: f64, slack: f64) -> RatioBoundReport {
    let bound = ratio_bound(eps, d) + slack;
    let violations = records.iter().filter(|r| r.rho_pi_dev_first > bound).count();
    RatioBoundReport {
        iterations: records.len(),
        violations,
        violation_rate: if records.is_empty() { 0.0 } else { violations as f64 / records.len() as f64 },
        bound,
        max_deviation: records.iter().map(|r| r.rho_pi_dev_first).fold(0.0, f64::max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinsker_keeps_far_policies_inside_the_bound() {
        let beta = [0.9, 0.1];
        let kl_of = |p: f64| p * (p / beta[0]).ln() + (1.0 - p) * ((1.0 - p) / beta[1]).ln();
        // bisect for KL(pi || beta) = 1 nat with pi(a_0) below beta(a_0)
        let (mut lo, mut hi) = (1e-9, 0.9);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if kl_of(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let pi = [lo, 1.0 - lo];
        let kl = kl_of(lo);
        assert!((kl - 1.0).abs() < 1e-9);
        let dev = expected_ratio_deviation(&pi, &beta);
        assert!(dev <= 2.0 * (kl / 2.0).sqrt());
        assert!(dev <= ratio_bound(0.2, kl) + RATIO_BOUND_SLACK);
    }

    #[test]
    fn identical_policies_have_zero_deviation() {
        assert_eq!(expected_ratio_deviation(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
    }
}
