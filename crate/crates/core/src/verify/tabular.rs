use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::VerifyError;

/// Entries of tabular policies never drop below this.
pub const POLICY_FLOOR: f64 = 1e-10;

/// Finite POMDP with a deterministic observation map.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularPomdp {
    pub n_states: usize,
    pub n_obs: usize,
    pub n_actions: usize,
    /// `P(s'|s,a)` at `(s * n_actions + a) * n_states + s'`.
    pub transitions: Vec<f64>,
    /// `r(s,a)` at `s * n_actions + a`.
    pub rewards: Vec<f64>,
    pub omega: Vec<usize>,
    pub init: Vec<f64>,
    pub gamma: f64,
}

pub const MAX_TABULAR: usize = 8;

impl TabularPomdp {
    pub fn new(
        n_states: usize,
        n_obs: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        omega: Vec<usize>,
        init: Vec<f64>,
        gamma: f64,
    ) -> Result<Self, VerifyError> {
        let bad = |m: String| Err(VerifyError::Invalid(m));
        for (what, n) in [("states", n_states), ("observations", n_obs), ("actions", n_actions)] {
            if n == 0 || n > MAX_TABULAR {
                return bad(format!("{n} {what}, expected 1..={MAX_TABULAR}"));
            }
        }
        if transitions.len() != n_states * n_actions * n_states || rewards.len() != n_states * n_actions {
            return bad("table sizes do not match the dimensions".into());
        }
        if omega.len() != n_states || omega.iter().any(|&o| o >= n_obs) {
            return bad("observation map must send every state to a valid observation".into());
        }
        if init.len() != n_states || (init.iter().sum::<f64>() - 1.0).abs() > 1e-12 || init.iter().any(|&x| x < 0.0) {
            return bad("initial distribution must lie on the simplex".into());
        }
        for row in transitions.chunks(n_states) {
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 || row.iter().any(|&x| x < 0.0) {
                return bad("transition rows must sum to one".into());
            }
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return bad(format!("gamma {gamma} outside (0, 1]"));
        }
        Ok(Self {
            n_states,
            n_obs,
            n_actions,
            transitions,
            rewards,
            omega,
            init,
            gamma,
        })
    }

    pub fn p(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transitions[(s * self.n_actions + a) * self.n_states + s2]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    /// Random instance; when `n_obs < n_states` at least one observation is
    /// shared by several states.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_obs: usize, n_actions: usize, gamma: f64) -> Result<Self, VerifyError> {
        if n_obs > n_states {
            return Err(VerifyError::Invalid("more observations than states".into()));
        }
        let simplex = |rng: &mut R, n: usize| {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let z: f64 = v.iter().sum();
            v.into_iter().map(|x| x / z).collect::<Vec<_>>()
        };
        let mut transitions = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            transitions.extend(simplex(rng, n_states));
        }
        let rewards = (0..n_states * n_actions).map(|_| rng.random_range(-1.0..1.0)).collect();
        // every observation gets one state, the rest are assigned at random
        let mut omega: Vec<usize> = (0..n_states).map(|s| if s < n_obs { s } else { rng.random_range(0..n_obs) }).collect();
        for i in (1..n_states).rev() {
            omega.swap(i, rng.random_range(0..=i));
        }
        let init = simplex(rng, n_states);
        Self::new(n_states, n_obs, n_actions, transitions, rewards, omega, init, gamma)
    }

    /// The same dynamics with an injective observation map.
    pub fn fully_observable(&self) -> Self {
        Self {
            n_obs: self.n_states,
            omega: (0..self.n_states).collect(),
            ..self.clone()
        }
    }

    /// Two aliased doors plus an absorbing terminal state with its own
    /// observation. Payoffs `(s_L, a_L) = 2`, `(s_R, a_R) = 1`, else 0.
    pub fn tigerdoor_alt(gamma: f64) -> Self {
        Self::tigerdoor_alt_with([[2.0, 0.0], [0.0, 1.0]], gamma)
    }

    pub fn tigerdoor_alt_with(payoff: [[f64; 2]; 2], gamma: f64) -> Self {
        let mut transitions = vec![0.0; 3 * 2 * 3];
        for s in 0..3 {
            for a in 0..2 {
                transitions[(s * 2 + a) * 3 + 2] = 1.0;
            }
        }
        let rewards = vec![payoff[0][0], payoff[0][1], payoff[1][0], payoff[1][1], 0.0, 0.0];
        Self::new(3, 2, 2, transitions, rewards, vec![0, 0, 1], vec![0.5, 0.5, 0.0], gamma).expect("well-formed instance")
    }

    /// States mapped to observation `o`.
    pub fn states_of(&self, o: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_states).filter(move |&s| self.omega[s] == o)
    }
}

/// Row-stochastic table: one row per state (guider) or observation (learner).
#[derive(Clone, Debug, PartialEq)]
pub struct TabularPolicy {
    pub n_rows: usize,
    pub n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    /// Floors every entry at [`POLICY_FLOOR`] and renormalizes each row.
    pub fn from_rows(n_actions: usize, rows: &[Vec<f64>]) -> Result<Self, VerifyError> {
        let mut probs = Vec::with_capacity(rows.len() * n_actions);
        for r in rows {
            if r.len() != n_actions || r.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(VerifyError::Invalid(format!("bad policy row {r:?}")));
            }
            let floored: Vec<f64> = r.iter().map(|&x| x.max(POLICY_FLOOR)).collect();
            let z: f64 = floored.iter().sum();
            probs.extend(floored.into_iter().map(|x| x / z));
        }
        Ok(Self {
            n_rows: rows.len(),
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_rows: usize, n_actions: usize) -> Self {
        Self {
            n_rows,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_rows * n_actions],
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_rows: usize, n_actions: usize) -> Self {
        let rows: Vec<Vec<f64>> = (0..n_rows).map(|_| (0..n_actions).map(|_| rng.random_range(0.05..1.0)).collect()).collect();
        Self::from_rows(n_actions, &rows).expect("positive rows")
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.n_actions..(i + 1) * self.n_actions]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn get(&self, i: usize, a: usize) -> f64 {
        self.probs[i * self.n_actions + a]
    }

    /// Observation policy viewed as a state policy through `omega`.
    pub fn lift(&self, m: &TabularPomdp) -> TabularPolicy {
        let mut probs = Vec::with_capacity(m.n_states * self.n_actions);
        for s in 0..m.n_states {
            probs.extend_from_slice(self.row(m.omega[s]));
        }
        Self {
            n_rows: m.n_states,
            n_actions: self.n_actions,
            probs,
        }
    }

    pub fn max_abs_diff(&self, other: &TabularPolicy) -> f64 {
        self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Exact evaluation of a state policy.
#[derive(Clone, Debug)]
pub struct ValueGrad {
    pub v: Vec<f64>,
    /// `Q(s,a)` at `s * n_actions + a`.
    pub q: Vec<f64>,
    /// Normalized discounted state occupancy from the initial distribution.
    pub occupancy: Vec<f64>,
    /// `sum_s init(s) V(s)`.
    pub objective: f64,
    /// `d(s) Q(s,a) / (1 - gamma)`, laid out like `q`.
    pub grad: Vec<f64>,
}

fn solve(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>, VerifyError> {
    let x = a.lu().solve(&b).ok_or(VerifyError::Singular)?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(VerifyError::Singular)
    }
}

pub fn exact_value_and_grad(m: &TabularPomdp, policy: &TabularPolicy) -> Result<ValueGrad, VerifyError> {
    if policy.n_rows != m.n_states || policy.n_actions != m.n_actions {
        return Err(VerifyError::Invalid("policy shape does not match the instance".into()));
    }
    let (ns, na, g) = (m.n_states, m.n_actions, m.gamma);
    let mut system = DMatrix::<f64>::identity(ns, ns);
    let mut r_pi = DVector::<f64>::zeros(ns);
    for s in 0..ns {
        for a in 0..na {
            let pa = policy.get(s, a);
            r_pi[s] += pa * m.r(s, a);
            for s2 in 0..ns {
                system[(s, s2)] -= g * pa * m.p(s, a, s2);
            }
        }
    }
    let v = solve(system.clone(), r_pi)?;
    let visits = solve(system.transpose(), DVector::from_column_slice(&m.init))?;
    let occupancy: Vec<f64> = visits.iter().map(|x| x * (1.0 - g)).collect();

    let mut q = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            q[s * na + a] = m.r(s, a) + g * (0..ns).map(|s2| m.p(s, a, s2) * v[s2]).sum::<f64>();
        }
    }
    let grad = (0..ns * na).map(|i| occupancy[i / na] * q[i] / (1.0 - g)).collect();
    let objective = m.init.iter().zip(v.iter()).map(|(p, v)| p * v).sum();
    Ok(ValueGrad {
        v: v.iter().copied().collect(),
        q,
        occupancy,
        objective,
        grad,
    })
}

/// Closed-form mirror-descent step from a state policy:
/// `argmin -eta <grad V(pi), mu> + D_pi(mu, pi) / (1 - gamma)` with `D` the
/// occupancy-weighted KL. Per state this is `mu ∝ pi exp(eta (1-gamma) grad / d)`.
/// States with zero occupancy keep `pi`.
pub fn pmd_guider_step(m: &TabularPomdp, pi: &TabularPolicy, eta: f64) -> Result<TabularPolicy, VerifyError> {
    let vg = exact_value_and_grad(m, pi)?;
    let na = m.n_actions;
    let rows: Vec<Vec<f64>> = (0..m.n_states)
        .map(|s| {
            let d = vg.occupancy[s];
            let base = pi.row(s);
            if d <= 0.0 {
                return base.to_vec();
            }
            let logits: Vec<f64> = (0..na).map(|a| base[a].ln() + eta * (1.0 - m.gamma) * vg.grad[s * na + a] / d).collect();
            softmax(&logits)
        })
        .collect();
    TabularPolicy::from_rows(na, &rows)
}

/// Occupancy-weighted KL projection of a state policy onto observation
/// policies: each observation row is the weighted geometric mean of its
/// states' rows. Observations without weight keep their `prior` row.
pub fn bregman_project(m: &TabularPomdp, mu_hat: &TabularPolicy, weights: &[f64], prior: &TabularPolicy) -> Result<TabularPolicy, VerifyError> {
    let na = m.n_actions;
    let rows: Vec<Vec<f64>> = (0..m.n_obs)
        .map(|o| {
            let total: f64 = m.states_of(o).map(|s| weights[s]).sum();
            if total <= 0.0 {
                log::info!("observation {o} has zero occupancy; keeping the prior row");
                return prior.row(o).to_vec();
            }
            let logits: Vec<f64> = (0..na)
                .map(|a| m.states_of(o).map(|s| weights[s] / total * mu_hat.get(s, a).ln()).sum())
                .collect();
            softmax(&logits)
        })
        .collect();
    TabularPolicy::from_rows(na, &rows)
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Convex objective on the simplex given as value, gradient and diagonal
/// Hessian.
pub trait SimplexObjective {
    fn eval(&self, p: &[f64]) -> (f64, Vec<f64>, Vec<f64>);

    /// Interior starting point.
    fn start(&self, n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }
}

/// `sum_k c_k KL(p || q_k) - <b, p>` with `c_k > 0`.
pub struct KlLinear<'a> {
    pub anchors: Vec<(f64, &'a [f64])>,
    pub linear: Vec<f64>,
}

impl SimplexObjective for KlLinear<'_> {
    fn eval(&self, p: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let n = p.len();
        let mut f = 0.0;
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n];
        for &(c, q) in &self.anchors {
            for a in 0..n {
                let l = (p[a] / q[a]).ln();
                f += c * p[a] * l;
                g[a] += c * (l + 1.0);
                h[a] += c / p[a];
            }
        }
        for a in 0..n {
            f -= self.linear[a] * p[a];
            g[a] -= self.linear[a];
        }
        (f, g, h)
    }

    /// Weight-averaged anchor distribution.
    fn start(&self, n: usize) -> Vec<f64> {
        let total: f64 = self.anchors.iter().map(|(c, _)| c).sum();
        (0..n).map(|a| self.anchors.iter().map(|(c, q)| c * q[a]).sum::<f64>() / total).collect()
    }
}

/// Damped Newton method on the probability simplex with the equality
/// constraint handled exactly and a fraction-to-boundary step rule.
pub fn newton_simplex(obj: &impl SimplexObjective, n: usize) -> Vec<f64> {
    let mut p = obj.start(n);
    let mut last_decrement = f64::INFINITY;
    for _ in 0..500 {
        let (f, g, h) = obj.eval(&p);
        let inv: Vec<f64> = h.iter().map(|x| 1.0 / x).collect();
        let nu = -g.iter().zip(&inv).map(|(g, i)| g * i).sum::<f64>() / inv.iter().sum::<f64>();
        let step: Vec<f64> = (0..n).map(|a| -(g[a] + nu) * inv[a]).collect();
        let decrement: f64 = step.iter().zip(&h).map(|(d, h)| d * d * h).sum();
        // close to the optimum f stops resolving the decrease, so full steps
        // run until the decrement stagnates
        let local = decrement < 1e-8;
        if decrement < 1e-32 || (local && decrement >= last_decrement) {
            break;
        }
        last_decrement = decrement;
        let mut t = 1.0;
        while (0..n).any(|a| p[a] + t * step[a] <= 0.0) {
            t *= 0.5;
        }
        let trial = |t: f64| -> Vec<f64> { (0..n).map(|a| p[a] + t * step[a]).collect() };
        if !local {
            while t > 1e-12 && obj.eval(&trial(t)).0 > f - 0.25 * t * decrement {
                t *= 0.5;
            }
            if t <= 1e-12 {
                break;
            }
        }
        let next = trial(t);
        let z: f64 = next.iter().sum();
        p = next.into_iter().map(|x| x / z).collect();
    }
    p
}

/// Solves the constrained mirror-descent problem over observation policies
/// directly:
/// `argmin_{pi in Pi} -eta <grad V(pi_k), pi> + D_{pi_k}(pi, pi_k) / (1 - gamma)`.
pub fn constrained_pmd_oracle(m: &TabularPomdp, pi_k: &TabularPolicy, eta: f64) -> Result<TabularPolicy, VerifyError> {
    let lifted = pi_k.lift(m);
    let vg = exact_value_and_grad(m, &lifted)?;
    let na = m.n_actions;
    let scale = 1.0 / (1.0 - m.gamma);
    let mut rows = Vec::with_capacity(m.n_obs);
    for o in 0..m.n_obs {
        let states: Vec<usize> = m.states_of(o).filter(|&s| vg.occupancy[s] > 0.0).collect();
        if states.is_empty() {
            rows.push(pi_k.row(o).to_vec());
            continue;
        }
        let anchors = states.iter().map(|&s| (vg.occupancy[s] * scale, lifted.row(s))).collect();
        let linear = (0..na).map(|a| states.iter().map(|&s| eta * vg.grad[s * na + a]).sum()).collect();
        rows.push(newton_simplex(&KlLinear { anchors, linear }, na));
    }
    TabularPolicy::from_rows(na, &rows)
}

/// [`pmd_guider_step`] solved numerically, one state at a time.
pub fn pmd_guider_step_oracle(m: &TabularPomdp, pi: &TabularPolicy, eta: f64) -> Result<TabularPolicy, VerifyError> {
    let vg = exact_value_and_grad(m, pi)?;
    let na = m.n_actions;
    let rows: Vec<Vec<f64>> = (0..m.n_states)
        .map(|s| {
            let d = vg.occupancy[s];
            if d <= 0.0 {
                return pi.row(s).to_vec();
            }
            let obj = KlLinear {
                anchors: vec![(d / (1.0 - m.gamma), pi.row(s))],
                linear: (0..na).map(|a| eta * vg.grad[s * na + a]).collect(),
            };
            newton_simplex(&obj, na)
        })
        .collect();
    TabularPolicy::from_rows(na, &rows)
}

/// [`bregman_project`] solved numerically.
pub fn bregman_project_oracle(m: &TabularPomdp, mu_hat: &TabularPolicy, weights: &[f64], prior: &TabularPolicy) -> Result<TabularPolicy, VerifyError> {
    let na = m.n_actions;
    let rows: Vec<Vec<f64>> = (0..m.n_obs)
        .map(|o| {
            let anchors: Vec<(f64, &[f64])> = m.states_of(o).filter(|&s| weights[s] > 0.0).map(|s| (weights[s], mu_hat.row(s))).collect();
            if anchors.is_empty() {
                return prior.row(o).to_vec();
            }
            newton_simplex(&KlLinear { anchors, linear: vec![0.0; na] }, na)
        })
        .collect();
    TabularPolicy::from_rows(na, &rows)
}

#[derive(Clone, Debug)]
pub struct EquivalenceReport {
    pub max_deviation: f64,
    /// Objective of the two-stage iterate after each iteration.
    pub values: Vec<f64>,
    pub final_two_stage: TabularPolicy,
    pub final_direct: TabularPolicy,
}

/// Runs the guider step plus projection (with the guider backtracked to the
/// learner each iteration) next to the direct constrained step and reports
/// the largest policy-table gap seen.
pub fn pmd_equivalence_check(m: &TabularPomdp, pi0: &TabularPolicy, eta: f64, n_iters: usize) -> Result<EquivalenceReport, VerifyError> {
    let mut two_stage = pi0.clone();
    let mut direct = pi0.clone();
    let mut max_deviation: f64 = 0.0;
    let mut values = Vec::with_capacity(n_iters);
    for _ in 0..n_iters {
        let guider = two_stage.lift(m);
        let weights = exact_value_and_grad(m, &guider)?.occupancy;
        let mu_hat = pmd_guider_step(m, &guider, eta)?;
        two_stage = bregman_project(m, &mu_hat, &weights, &two_stage)?;
        direct = constrained_pmd_oracle(m, &direct, eta)?;
        max_deviation = max_deviation.max(two_stage.max_abs_diff(&direct));
        values.push(exact_value_and_grad(m, &two_stage.lift(m))?.objective);
    }
    Ok(EquivalenceReport {
        max_deviation,
        values,
        final_two_stage: two_stage,
        final_direct: direct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_state_geometric_series() {
        let m = TabularPomdp::new(1, 1, 1, vec![1.0], vec![1.0], vec![0], vec![1.0], 0.5).unwrap();
        let vg = exact_value_and_grad(&m, &TabularPolicy::uniform(1, 1)).unwrap();
        assert!((vg.v[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn undiscounted_absorbing_loop_is_singular() {
        let m = TabularPomdp::new(1, 1, 1, vec![1.0], vec![1.0], vec![0], vec![1.0], 1.0).unwrap();
        assert!(matches!(exact_value_and_grad(&m, &TabularPolicy::uniform(1, 1)), Err(VerifyError::Singular)));
    }

    #[test]
    fn symmetric_two_state_values_match() {
        // swap states and actions: the instance maps to itself
        let t = vec![0.7, 0.3, 0.2, 0.8, 0.8, 0.2, 0.3, 0.7];
        let m = TabularPomdp::new(2, 1, 2, t, vec![1.0, 0.0, 0.0, 1.0], vec![0, 0], vec![0.5, 0.5], 0.9).unwrap();
        let vg = exact_value_and_grad(&m, &TabularPolicy::uniform(2, 2)).unwrap();
        assert!((vg.v[0] - vg.v[1]).abs() < 1e-13);
    }

    #[test]
    fn zero_step_and_zero_reward_are_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = TabularPomdp::random(&mut rng, 4, 2, 3, 0.9).unwrap();
        let pi = TabularPolicy::random(&mut rng, 4, 3);
        assert!(pmd_guider_step(&m, &pi, 0.0).unwrap().max_abs_diff(&pi) < 1e-15);
        let flat = TabularPomdp {
            rewards: vec![0.0; 12],
            ..m
        };
        assert!(pmd_guider_step(&flat, &pi, 0.3).unwrap().max_abs_diff(&pi) < 1e-15);
    }

    #[test]
    fn symmetric_projection_is_uniform() {
        let m = TabularPomdp::tigerdoor_alt(0.9);
        let mu = TabularPolicy::from_rows(2, &[vec![0.8, 0.2], vec![0.2, 0.8], vec![0.5, 0.5]]).unwrap();
        let prior = TabularPolicy::uniform(2, 2);
        let out = bregman_project(&m, &mu, &[0.3, 0.3, 0.4], &prior).unwrap();
        assert!((out.get(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_observation_keeps_prior() {
        let m = TabularPomdp::tigerdoor_alt(0.9);
        let mu = TabularPolicy::from_rows(2, &[vec![0.8, 0.2], vec![0.2, 0.8], vec![0.9, 0.1]]).unwrap();
        let prior = TabularPolicy::from_rows(2, &[vec![0.5, 0.5], vec![0.3, 0.7]]).unwrap();
        let out = bregman_project(&m, &mu, &[0.5, 0.5, 0.0], &prior).unwrap();
        assert_eq!(out.row(1), prior.row(1));
    }

    #[test]
    fn newton_solves_kl_linear_problem() {
        let q = [0.2, 0.5, 0.3];
        let obj = KlLinear {
            anchors: vec![(2.0, &q[..])],
            linear: vec![1.0, -0.5, 0.25],
        };
        let p = newton_simplex(&obj, 3);
        let logits: Vec<f64> = (0..3).map(|a| q[a].ln() + obj.linear[a] / 2.0).collect();
        let want = softmax(&logits);
        for a in 0..3 {
            assert!((p[a] - want[a]).abs() < 1e-14, "{p:?} vs {want:?}");
        }
    }

    #[test]
    fn rejects_malformed_instances() {
        assert!(TabularPomdp::new(1, 1, 1, vec![0.9], vec![1.0], vec![0], vec![1.0], 0.5).is_err());
        assert!(TabularPomdp::new(1, 1, 1, vec![1.0], vec![1.0], vec![1], vec![1.0], 0.5).is_err());
        assert!(TabularPomdp::new(9, 1, 1, vec![], vec![], vec![], vec![], 0.5).is_err());
    }
}
