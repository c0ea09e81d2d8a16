//! The co-training loop: collect, estimate advantages, run minibatch epochs
//! on the configured loss, adapt α, log.

use std::io::{Read, Write};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{instance_rng, EnvConfig, EnvError, EnvPool, PomdpEnv};
use crate::nn::{clip_grad_norm, learner_input, Adam, NetShape, NnError, ParamVector, PolicyNet};
use crate::objectives::{evaluate, Algorithm, AlphaState, InnerClip, LossBreakdown, LossConfig, MaskMode, MiniBatch, ObjectiveError};
use crate::rollout::{minibatches, Collector, RolloutError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("non-finite loss at iteration {iteration}, minibatch {minibatch}")]
    NonFiniteLoss {
        iteration: usize,
        minibatch: usize,
        diagnostics: Box<LossBreakdown>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Act with the mode of the learner distribution.
    Greedy,
    /// Sample from the learner distribution.
    Stochastic,
}

/// Every hyperparameter of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpoConfig {
    pub algorithm: Algorithm,
    pub env: EnvConfig,
    /// Observation stacking window for the learner.
    pub stack: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub inner_clip: InnerClip,
    /// KL threshold `d` of the α schedule.
    pub kl_threshold: f64,
    /// Scaling factor `k` of the α schedule.
    pub alpha_k: f64,
    /// Initial α (adaptive variants) or the fixed α (all others).
    pub alpha: f64,
    pub learning_rate: f64,
    pub n_envs: usize,
    pub unroll: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub total_timesteps: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub seed: u64,
    pub normalize_advantages: bool,
    pub net: NetShape,
    pub advisor_alpha_w: f64,
    pub a2d_lambda: f64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub eval_mode: EvalMode,
    /// Stop once a learner evaluation reaches this return.
    pub target_return: Option<f64>,
}

impl Default for GpoConfig {
    fn default() -> Self {
        Self::didactic(Algorithm::GpoPenalty, EnvConfig::TigerDoorAlt)
    }
}

impl GpoConfig {
    /// TigerDoor column of the hyperparameter table.
    pub fn didactic(algorithm: Algorithm, env: EnvConfig) -> Self {
        Self {
            algorithm,
            env,
            stack: 1,
            gamma: 0.99,
            gae_lambda: 1.0,
            clip_eps: 0.2,
            inner_clip: InnerClip::Ratio(1.1),
            kl_threshold: 0.001,
            alpha_k: 1.5,
            alpha: 1.0,
            learning_rate: 5e-5,
            n_envs: 64,
            unroll: 1024,
            epochs: 30,
            minibatches: 8,
            total_timesteps: 2_000_000,
            entropy_coef: 0.0,
            value_coef: 1.0,
            max_grad_norm: 0.5,
            seed: 0,
            normalize_advantages: false,
            net: NetShape {
                hidden: vec![128, 128],
                value_hidden: vec![128, 128],
                ..NetShape::default()
            },
            advisor_alpha_w: 10.0,
            a2d_lambda: 0.0,
            eval_every: 1,
            eval_episodes: 1000,
            eval_mode: EvalMode::Greedy,
            target_return: None,
        }
    }

    /// Cheaper variant of a didactic preset for single-core desk runs:
    /// 64-step unrolls and one hidden layer of 128, everything else kept.
    pub fn desk(self) -> Self {
        Self {
            unroll: 64,
            net: NetShape::default(),
            ..self
        }
    }

    /// Scaled-down preset for the continuous navigation task.
    pub fn continuous(algorithm: Algorithm, sigma: f64) -> Self {
        Self {
            env: EnvConfig::NoisyMaskedNav { sigma },
            gamma: 0.97,
            gae_lambda: 0.95,
            inner_clip: InnerClip::Delta(0.3),
            alpha: 2.0,
            learning_rate: 3e-4,
            n_envs: 32,
            unroll: 100,
            epochs: 4,
            minibatches: 4,
            total_timesteps: 600_000,
            entropy_coef: 0.0,
            normalize_advantages: true,
            net: NetShape {
                hidden: vec![64, 64],
                value_hidden: vec![64, 64],
                ..NetShape::default()
            },
            eval_every: 5,
            eval_episodes: 256,
            ..Self::didactic(algorithm, EnvConfig::TigerDoorAlt)
        }
    }

    /// Scaled-down preset for the memory task.
    pub fn memory(algorithm: Algorithm, k: usize, stack: usize) -> Self {
        Self {
            env: EnvConfig::RepeatPrevious { k },
            stack,
            inner_clip: InnerClip::Ratio(1.2),
            kl_threshold: 0.001,
            learning_rate: 5e-4,
            n_envs: 32,
            unroll: 128,
            epochs: 8,
            minibatches: 4,
            total_timesteps: 400_000,
            net: NetShape {
                hidden: vec![64],
                value_hidden: vec![64],
                ..NetShape::default()
            },
            eval_every: 5,
            eval_episodes: 200,
            ..Self::didactic(algorithm, EnvConfig::TigerDoorAlt)
        }
    }

    pub fn batch_size(&self) -> usize {
        self.n_envs * self.unroll
    }

    pub fn n_iterations(&self) -> usize {
        self.total_timesteps / self.batch_size().max(1)
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            clip_eps: self.clip_eps,
            inner: self.inner_clip,
            entropy_coef: self.entropy_coef,
            value_coef: self.value_coef,
            advisor_alpha_w: self.advisor_alpha_w,
            a2d_lambda: self.a2d_lambda,
            mask: MaskMode::Computed,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.gae_lambda >= 0.0 && self.gae_lambda <= 1.0) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        match self.inner_clip {
            InnerClip::Delta(d) if d > 0.0 => {}
            InnerClip::Ratio(r) if r > 1.0 => {}
            _ => return bad("inner_clip needs delta > 0 or rho > 1"),
        }
        if self.kl_threshold <= 0.0 || self.alpha_k <= 1.0 || self.alpha < 0.0 {
            return bad("kl_threshold > 0, alpha_k > 1 and alpha >= 0 are required");
        }
        if self.learning_rate <= 0.0 || self.max_grad_norm <= 0.0 {
            return bad("learning_rate and max_grad_norm must be positive");
        }
        if self.n_envs == 0 || self.unroll == 0 || self.epochs == 0 || self.minibatches == 0 || self.stack == 0 {
            return bad("n_envs, unroll, epochs, minibatches and stack must be positive");
        }
        if self.minibatches > self.batch_size() {
            return bad("more minibatches than samples per iteration");
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("eval_every and eval_episodes must be positive");
        }
        if !(0.0..=1.0).contains(&self.a2d_lambda) {
            return bad("a2d_lambda must lie in [0, 1]");
        }
        if self.net.hidden.is_empty() || self.net.value_hidden.is_empty() {
            return bad("networks need at least one hidden layer");
        }
        Ok(())
    }

    /// Network matching this config's environment.
    pub fn build_net(&self) -> Result<PolicyNet, TrainError> {
        let probe = self.env.build(instance_rng(0, 0), self.stack)?;
        let spec = probe.spec();
        Ok(PolicyNet::new(
            spec.state_dim,
            spec.obs_dim,
            spec.action_space.head(),
            &self.net,
            self.algorithm.needs_aux_head(),
        )?)
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub timesteps: usize,
    pub guider_episodes: usize,
    /// Mean undiscounted return of episodes finished during collection.
    pub behavior_return: f64,
    pub learner_return: f64,
    pub learner_return_std: f64,
    /// α in effect during this iteration's updates.
    pub alpha: f64,
    /// Mean `|1 - pi(a|o_l) / beta(a)|` over the fresh batch, before updates.
    pub rho_pi_dev_first: f64,
    /// Means over the last epoch.
    pub loss: LossBreakdown,
}

impl TrainRecord {
    pub fn columns() -> Vec<&'static str> {
        let mut c = vec![
            "iteration",
            "timesteps",
            "guider_episodes",
            "behavior_return",
            "learner_return",
            "learner_return_std",
            "alpha",
            "rho_pi_dev_first",
        ];
        c.extend(LossBreakdown::COLUMNS.iter().map(|s| match *s {
            "alpha" => "loss_alpha",
            other => other,
        }));
        c
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn final_learner_return(&self) -> Option<f64> {
        self.records.last().map(|r| r.learner_return)
    }

    /// First timestep count whose learner evaluation meets `target`.
    pub fn reached(&self, target: f64) -> Option<usize> {
        self.records.iter().find(|r| r.learner_return >= target).map(|r| r.timesteps)
    }
}

pub struct TrainOutcome {
    pub log: TrainLog,
    pub net: PolicyNet,
    pub params: ParamVector,
}

fn stream(seed: u64, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(salt);
    rng
}

const INIT_STREAM: u64 = 1 << 40;
const ACT_STREAM: u64 = (1 << 40) + 1;
const SHUFFLE_STREAM: u64 = (1 << 40) + 2;

fn env_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1)
}

fn eval_seed(seed: u64, iteration: usize) -> u64 {
    env_seed(seed) ^ (0xA5A5_0000_0000 + iteration as u64)
}

/// Runs one training configuration to completion.
pub fn train(config: &GpoConfig) -> Result<TrainOutcome, TrainError> {
    train_with(config, |_| {})
}

/// As [`train`], calling `on_record` after each iteration.
pub fn train_with(config: &GpoConfig, mut on_record: impl FnMut(&TrainRecord)) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let net = config.build_net()?;
    let mut params = net.init(&mut stream(config.seed, INIT_STREAM));
    let mut act_rng = stream(config.seed, ACT_STREAM);
    let mut shuffle_rng = stream(config.seed, SHUFFLE_STREAM);
    let pool = EnvPool::new(&config.env, config.n_envs, env_seed(config.seed), config.stack)?;
    let mut collector = Collector::new(pool);
    let mut opt = Adam::new(params.len(), config.learning_rate);
    let algo = config.algorithm;
    let loss_cfg = config.loss_config();
    let behavior = algo.behavior(config.a2d_lambda);
    let value_input = algo.value_input(config.a2d_lambda);
    let mut alpha = AlphaState {
        alpha: config.alpha,
        d: config.kl_threshold,
        k: config.alpha_k,
    };
    let mut log = TrainLog::default();
    let mut timesteps = 0;

    for iteration in 0..config.n_iterations() {
        let mut batch = collector.collect(&net, &params, behavior, value_input, config.unroll, &mut act_rng)?;
        batch.compute_targets(config.gamma, config.gae_lambda);
        if config.normalize_advantages {
            batch.normalize_advantages();
        }
        let rho_pi_dev_first = rho_pi_deviation(&net, &params, &batch.learner_obs, &batch.actions, &batch.behavior_logprob)?;

        let sets = minibatches(batch.len(), config.minibatches, config.epochs, &mut shuffle_rng);
        let mut last_epoch = Vec::with_capacity(config.minibatches);
        for (j, idx) in sets.iter().enumerate() {
            let mb = MiniBatch::from_batch(&batch, idx);
            let eval = evaluate(algo, &loss_cfg, alpha.alpha, &net, &params, &mb, None, true)?;
            let mut grad = eval.grad.expect("gradient requested");
            if !eval.breakdown.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFiniteLoss {
                    iteration,
                    minibatch: j,
                    diagnostics: Box::new(eval.breakdown),
                });
            }
            clip_grad_norm(&mut grad, config.max_grad_norm);
            opt.step(&mut params.0, &grad);
            if j >= sets.len() - config.minibatches {
                last_epoch.push(eval.breakdown);
            }
        }
        let loss = LossBreakdown::mean(&last_epoch);
        let alpha_used = alpha.alpha;
        if algo.adapts_alpha() {
            alpha = alpha.update(loss.mean_kl_mu_pi);
        }
        timesteps += batch.len();

        let last = iteration + 1 == config.n_iterations();
        let (learner_return, learner_return_std) = if iteration % config.eval_every == 0 || last {
            evaluate_learner(
                &net,
                &params,
                &config.env,
                config.stack,
                config.eval_episodes,
                config.eval_mode,
                eval_seed(config.seed, iteration),
            )?
        } else {
            let prev = log.records.last().map_or((0.0, 0.0), |r: &TrainRecord| (r.learner_return, r.learner_return_std));
            prev
        };
        let n_ep = batch.episode_returns.len();
        let record = TrainRecord {
            iteration,
            timesteps,
            guider_episodes: n_ep,
            behavior_return: if n_ep > 0 { batch.episode_returns.iter().sum::<f64>() / n_ep as f64 } else { 0.0 },
            learner_return,
            learner_return_std,
            alpha: alpha_used,
            rho_pi_dev_first,
            loss,
        };
        log::debug!(
            "{} it {iteration} t {timesteps} learner {learner_return:.4} alpha {alpha_used:.4} kl {:.2e}",
            algo,
            record.loss.mean_kl_mu_pi
        );
        on_record(&record);
        log.records.push(record);
        if config.target_return.is_some_and(|t| learner_return >= t) {
            break;
        }
    }
    Ok(TrainOutcome { log, net, params })
}

/// Mean `|1 - pi(a|o_l) / beta(a)|` under the current parameters.
pub fn rho_pi_deviation(
    net: &PolicyNet,
    params: &ParamVector,
    learner_obs: &Array2<f64>,
    actions: &crate::nn::ActionBatch,
    behavior_logprob: &[f64],
) -> Result<f64, NnError> {
    let pi = net.policy_dists(params, learner_obs.view())?;
    let mut total = 0.0;
    for (i, d) in pi.iter().enumerate() {
        total += (1.0 - (d.log_prob(&actions.get(i))? - behavior_logprob[i]).exp()).abs();
    }
    Ok(total / pi.len() as f64)
}

/// Runs `n_episodes` learner episodes on fresh instances, batched.
pub fn evaluate_learner(
    net: &PolicyNet,
    params: &ParamVector,
    env: &EnvConfig,
    stack: usize,
    n_episodes: usize,
    mode: EvalMode,
    seed: u64,
) -> Result<(f64, f64), TrainError> {
    const CHUNK: usize = 1024;
    let mut returns = Vec::with_capacity(n_episodes);
    let mut rng = stream(seed, ACT_STREAM);
    let mut start = 0;
    while start < n_episodes {
        let n = CHUNK.min(n_episodes - start);
        let mut envs = (start..start + n)
            .map(|i| env.build(instance_rng(seed, i), stack))
            .collect::<Result<Vec<_>, _>>()?;
        returns.extend(run_learner_episodes(net, params, &mut envs, mode, &mut rng)?);
        start += n;
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// One episode per env, acting on learner inputs only. The privileged state
/// is never read; the zero block of `o_l` comes from the spec's `state_dim`.
pub fn run_learner_episodes<R: rand::Rng + ?Sized>(
    net: &PolicyNet,
    params: &ParamVector,
    envs: &mut [Box<dyn PomdpEnv>],
    mode: EvalMode,
    rng: &mut R,
) -> Result<Vec<f64>, TrainError> {
    let n = envs.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let state_dim = envs[0].spec().state_dim;
    let mut obs: Vec<Vec<f64>> = envs.iter_mut().map(|e| e.reset().obs).collect();
    let mut returns = vec![0.0; n];
    let mut live: Vec<usize> = (0..n).collect();
    while !live.is_empty() {
        let rows: Vec<Vec<f64>> = live.iter().map(|&i| learner_input(state_dim, &obs[i])).collect();
        let x = crate::nn::rows_to_matrix(&rows);
        let dists = net.policy_dists(params, x.view())?;
        let mut still = Vec::with_capacity(live.len());
        for (k, &i) in live.iter().enumerate() {
            let a = match mode {
                EvalMode::Greedy => dists[k].mode(),
                EvalMode::Stochastic => dists[k].sample(rng),
            };
            let out = envs[i].step(&a)?;
            returns[i] += out.reward;
            if !out.done {
                obs[i] = out.obs;
                still.push(i);
            }
        }
        live = still;
    }
    Ok(returns)
}

// ---------------------------------------------------------------------------
// Parameter files

const MAGIC: &[u8; 8] = b"GPOPARAM";
const VERSION: u32 = 1;

/// Writes `magic | version u32 | descriptor length u32 | descriptor |
/// sha256(descriptor) | count u64 | f64 values`, all little-endian.
pub fn write_params<W: Write>(mut w: W, net: &PolicyNet, params: &ParamVector) -> std::io::Result<()> {
    let desc = net.descriptor();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(desc.len() as u32).to_le_bytes())?;
    w.write_all(desc.as_bytes())?;
    w.write_all(&Sha256::digest(desc.as_bytes()))?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in &params.0 {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum ParamsFileError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a parameter file")]
    BadMagic,
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("descriptor hash mismatch")]
    Hash,
    #[error("{0}")]
    Layout(String),
}

pub fn read_params<R: Read>(mut r: R) -> Result<(PolicyNet, ParamVector), ParamsFileError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ParamsFileError::BadMagic);
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(ParamsFileError::Version(version));
    }
    r.read_exact(&mut b4)?;
    let mut desc = vec![0u8; u32::from_le_bytes(b4) as usize];
    r.read_exact(&mut desc)?;
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)?;
    if Sha256::digest(&desc).as_slice() != hash {
        return Err(ParamsFileError::Hash);
    }
    let desc = String::from_utf8(desc).map_err(|e| ParamsFileError::Layout(e.to_string()))?;
    let net = PolicyNet::from_descriptor(&desc).map_err(|e| ParamsFileError::Layout(e.to_string()))?;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    if count != net.n_params() {
        return Err(ParamsFileError::Layout(format!("{count} values for a {}-parameter layout", net.n_params())));
    }
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut b8)?;
        values.push(f64::from_le_bytes(b8));
    }
    let params = ParamVector(values);
    if !params.is_finite() {
        return Err(ParamsFileError::Layout("non-finite parameter".into()));
    }
    Ok((net, params))
}
