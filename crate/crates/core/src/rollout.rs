//! Trajectory collection, return and advantage estimation, minibatching.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::envs::{EnvError, EnvPool, PomdpSpec, StepResult};
use crate::nn::{guider_input, learner_input, Action, ActionBatch, ActionDist, NnError, ParamVector, PolicyNet};

#[derive(Debug, thiserror::Error)]
pub enum RolloutError {
    #[error("non-finite {what} from env {env} at step {step}")]
    NonFinite { what: &'static str, env: usize, step: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Which distribution samples the actions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Behavior {
    Guider,
    Learner,
    /// `lambda * guider + (1 - lambda) * learner`, sampled as a mixture.
    Mixture(f64),
}

/// Which input the value head sees when estimating V.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ValueInput {
    Guider,
    Learner,
    /// `lambda * V(o_g) + (1 - lambda) * V(o_l)`.
    Mixture(f64),
}

/// Rollout storage, env-major: step `t` of env `e` lives at `e * n_steps + t`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub n_envs: usize,
    pub n_steps: usize,
    pub guider_obs: Array2<f64>,
    pub learner_obs: Array2<f64>,
    pub actions: ActionBatch,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub behavior_logprob: Vec<f64>,
    pub values: Vec<f64>,
    /// V of the observation following each env's final step.
    pub bootstrap: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Undiscounted returns of episodes that finished during collection.
    pub episode_returns: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Fills `returns` and `advantages` per env stream.
    pub fn compute_targets(&mut self, gamma: f64, lambda: f64) {
        let t = self.n_steps;
        self.advantages = vec![0.0; self.len()];
        self.returns = vec![0.0; self.len()];
        for e in 0..self.n_envs {
            let r = e * t..(e + 1) * t;
            let adv = gae(&self.rewards[r.clone()], &self.values[r.clone()], &self.dones[r.clone()], self.bootstrap[e], gamma, lambda);
            let ret = reward_to_go(&self.rewards[r.clone()], &self.dones[r.clone()], self.bootstrap[e], gamma);
            self.advantages[r.clone()].copy_from_slice(&adv);
            self.returns[r].copy_from_slice(&ret);
        }
    }

    /// Rescales advantages to mean 0 and standard deviation 1 over the batch.
    pub fn normalize_advantages(&mut self) {
        let n = self.advantages.len() as f64;
        let mean = self.advantages.iter().sum::<f64>() / n;
        let var = self.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt() + 1e-8;
        self.advantages.iter_mut().for_each(|a| *a = (*a - mean) / std);
    }
}

/// `R_t = r_t + gamma * (1 - done_t) * R_{t+1}`, with `R_T = bootstrap`.
pub fn reward_to_go(rewards: &[f64], dones: &[bool], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut next = bootstrap;
    for t in (0..rewards.len()).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        next = rewards[t] + gamma * live * next;
        out[t] = next;
    }
    out
}

/// Generalized advantage estimates by backward recursion.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let next_v = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next_v * live - values[t];
        acc = delta + gamma * lambda * live * acc;
        out[t] = acc;
    }
    out
}

/// Index sets for `n_epochs` passes, each a fresh shuffle cut into
/// `n_minibatches` equal parts. Indices past the largest multiple of
/// `n_minibatches` are dropped.
pub fn minibatches<R: Rng + ?Sized>(n: usize, n_minibatches: usize, n_epochs: usize, rng: &mut R) -> Vec<Vec<usize>> {
    assert!(n_minibatches >= 1);
    let size = n / n_minibatches;
    let kept = size * n_minibatches;
    if kept < n {
        log::info!("dropping {} of {n} samples to fit {n_minibatches} minibatches", n - kept);
    }
    let mut out = Vec::with_capacity(n_epochs * n_minibatches);
    let mut idx: Vec<usize> = (0..kept).collect();
    for _ in 0..n_epochs {
        idx.shuffle(rng);
        out.extend(idx.chunks(size).map(<[usize]>::to_vec));
    }
    out
}

/// Owns an env pool and the latest observation of each instance so that
/// collection continues episodes across calls.
pub struct Collector {
    pool: EnvPool,
    spec: PomdpSpec,
    current: Vec<StepResult>,
    running: Vec<f64>,
}

impl Collector {
    pub fn new(mut pool: EnvPool) -> Self {
        let spec = pool.spec();
        let current = pool.envs_mut().iter_mut().map(|e| e.reset()).collect();
        let running = vec![0.0; pool.len()];
        Self { pool, spec, current, running }
    }

    pub fn spec(&self) -> &PomdpSpec {
        &self.spec
    }

    pub fn n_envs(&self) -> usize {
        self.pool.len()
    }

    fn inputs(&self) -> (Array2<f64>, Array2<f64>) {
        let d = self.spec.state_dim + self.spec.obs_dim + 1;
        let n = self.current.len();
        let mut g = Array2::zeros((n, d));
        let mut l = Array2::zeros((n, d));
        for (i, cur) in self.current.iter().enumerate() {
            g.row_mut(i).assign(&ndarray::ArrayView1::from(&guider_input(&cur.state, &cur.obs)));
            l.row_mut(i).assign(&ndarray::ArrayView1::from(&learner_input(self.spec.state_dim, &cur.obs)));
        }
        (g, l)
    }

    fn value_estimates(net: &PolicyNet, params: &ParamVector, how: ValueInput, g: &Array2<f64>, l: &Array2<f64>) -> Result<Vec<f64>, NnError> {
        Ok(match how {
            ValueInput::Guider => net.values(params, g.view())?,
            ValueInput::Learner => net.values(params, l.view())?,
            ValueInput::Mixture(lam) => {
                let vg = net.values(params, g.view())?;
                let vl = net.values(params, l.view())?;
                vg.iter().zip(&vl).map(|(a, b)| lam * a + (1.0 - lam) * b).collect()
            }
        })
    }

    /// Steps every env `n_steps` times under `behavior`.
    pub fn collect<R: Rng + ?Sized>(
        &mut self,
        net: &PolicyNet,
        params: &ParamVector,
        behavior: Behavior,
        value_input: ValueInput,
        n_steps: usize,
        rng: &mut R,
    ) -> Result<Batch, RolloutError> {
        let n_envs = self.n_envs();
        let d = net.input_dim();
        let total = n_envs * n_steps;
        let mut guider_obs = Array2::zeros((total, d));
        let mut learner_obs = Array2::zeros((total, d));
        let mut actions: Vec<Action> = vec![Action::Discrete(0); total];
        let mut rewards = vec![0.0; total];
        let mut dones = vec![false; total];
        let mut logp = vec![0.0; total];
        let mut values = vec![0.0; total];
        let mut episode_returns = Vec::new();

        for t in 0..n_steps {
            let (g, l) = self.inputs();
            let v = Self::value_estimates(net, params, value_input, &g, &l)?;
            let (mu, pi) = match behavior {
                Behavior::Guider => (Some(net.policy_dists(params, g.view())?), None),
                Behavior::Learner => (None, Some(net.policy_dists(params, l.view())?)),
                Behavior::Mixture(_) => (Some(net.policy_dists(params, g.view())?), Some(net.policy_dists(params, l.view())?)),
            };
            for e in 0..n_envs {
                let i = e * n_steps + t;
                let (a, lp) = match (behavior, &mu, &pi) {
                    (Behavior::Guider, Some(mu), _) => {
                        let a = mu[e].sample(rng);
                        let lp = mu[e].log_prob(&a)?;
                        (a, lp)
                    }
                    (Behavior::Learner, _, Some(pi)) => {
                        let a = pi[e].sample(rng);
                        let lp = pi[e].log_prob(&a)?;
                        (a, lp)
                    }
                    (Behavior::Mixture(lam), Some(mu), Some(pi)) => {
                        let a = if rng.random::<f64>() < lam { mu[e].sample(rng) } else { pi[e].sample(rng) };
                        let lp = mixture_log_prob(lam, &mu[e], &pi[e], &a)?;
                        (a, lp)
                    }
                    _ => unreachable!(),
                };
                guider_obs.row_mut(i).assign(&g.row(e));
                learner_obs.row_mut(i).assign(&l.row(e));
                logp[i] = lp;
                values[i] = v[e];
                let env = &mut self.pool.envs_mut()[e];
                let mut out = env.step(&a)?;
                if !out.reward.is_finite() {
                    return Err(RolloutError::NonFinite { what: "reward", env: e, step: t });
                }
                rewards[i] = out.reward;
                dones[i] = out.done;
                actions[i] = a;
                self.running[e] += out.reward;
                if out.done {
                    episode_returns.push(self.running[e]);
                    self.running[e] = 0.0;
                    out = env.reset();
                }
                if out.obs.iter().chain(&out.state).any(|x| !x.is_finite()) {
                    return Err(RolloutError::NonFinite { what: "observation", env: e, step: t });
                }
                self.current[e] = out;
            }
        }
        let (g, l) = self.inputs();
        let bootstrap = Self::value_estimates(net, params, value_input, &g, &l)?;
        let actions = match self.spec.action_space {
            crate::envs::ActionSpace::Discrete(_) => ActionBatch::Discrete(actions.iter().map(|a| a.discrete().unwrap()).collect()),
            crate::envs::ActionSpace::Continuous { dim, .. } => {
                let mut m = Array2::zeros((total, dim));
                for (i, a) in actions.iter().enumerate() {
                    if let Action::Continuous(v) = a {
                        m.row_mut(i).assign(&ndarray::ArrayView1::from(v));
                    }
                }
                ActionBatch::Continuous(m)
            }
        };
        Ok(Batch {
            n_envs,
            n_steps,
            guider_obs,
            learner_obs,
            actions,
            rewards,
            dones,
            behavior_logprob: logp,
            values,
            bootstrap,
            advantages: Vec::new(),
            returns: Vec::new(),
            episode_returns,
        })
    }
}

/// `log(lambda * mu(a) + (1 - lambda) * pi(a))`.
pub fn mixture_log_prob(lambda: f64, mu: &ActionDist, pi: &ActionDist, a: &Action) -> Result<f64, NnError> {
    if lambda == 0.0 {
        return pi.log_prob(a);
    }
    if lambda == 1.0 {
        return mu.log_prob(a);
    }
    let (lm, lp) = (mu.log_prob(a)? + lambda.ln(), pi.log_prob(a)? + (1.0 - lambda).ln());
    let m = lm.max(lp);
    Ok(m + ((lm - m).exp() + (lp - m).exp()).ln())
}

/// Selects rows of a matrix by index.
pub fn take_rows(m: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    m.select(Axis(0), idx)
}
