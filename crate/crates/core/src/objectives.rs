//! Loss functions for the guider/learner pair and the co-training baselines.
//!
//! Every loss is evaluated on one tape over a [`MiniBatch`]. Terms written
//! with a stop-gradient on one policy either detach live tape nodes or, when
//! a frozen parameter copy is supplied, recompute that side from constants.
//! The second form makes the stop-gradient losses ordinary functions of the
//! live parameters, which is what finite-difference checks need.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::nn::{ActionBatch, ActionDist, NnError, ParamVector, PolicyNet, Tape, TapeDist, Var};
use crate::rollout::{Batch, Behavior, ValueInput};

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),
    #[error("non-finite importance ratio at sample {0}")]
    NonFiniteRatio(usize),
    #[error("probabilities must be positive")]
    NonPositive,
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ppo,
    PpoAsym,
    PpoBc,
    GpoNaive,
    GpoAblation,
    GpoPenalty,
    GpoClip,
    AdvisorCo,
    A2d,
}

impl Algorithm {
    pub const ALL: [Algorithm; 9] = [
        Algorithm::Ppo,
        Algorithm::PpoAsym,
        Algorithm::PpoBc,
        Algorithm::GpoNaive,
        Algorithm::GpoAblation,
        Algorithm::GpoPenalty,
        Algorithm::GpoClip,
        Algorithm::AdvisorCo,
        Algorithm::A2d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ppo => "ppo",
            Algorithm::PpoAsym => "ppo_asym",
            Algorithm::PpoBc => "ppo_bc",
            Algorithm::GpoNaive => "gpo_naive",
            Algorithm::GpoAblation => "gpo_ablation",
            Algorithm::GpoPenalty => "gpo_penalty",
            Algorithm::GpoClip => "gpo_clip",
            Algorithm::AdvisorCo => "advisor_co",
            Algorithm::A2d => "a2d",
        }
    }

    pub fn parse(name: &str) -> Result<Self, ObjectiveError> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| ObjectiveError::UnknownAlgorithm(name.to_string()))
    }

    /// Policy that samples actions during collection.
    pub fn behavior(self, a2d_lambda: f64) -> Behavior {
        match self {
            Algorithm::Ppo | Algorithm::PpoAsym | Algorithm::AdvisorCo => Behavior::Learner,
            Algorithm::A2d => {
                if a2d_lambda == 0.0 {
                    Behavior::Learner
                } else {
                    Behavior::Mixture(a2d_lambda)
                }
            }
            _ => Behavior::Guider,
        }
    }

    pub fn value_input(self, a2d_lambda: f64) -> ValueInput {
        match self {
            Algorithm::Ppo | Algorithm::AdvisorCo => ValueInput::Learner,
            Algorithm::A2d => {
                if a2d_lambda == 0.0 {
                    ValueInput::Learner
                } else {
                    ValueInput::Mixture(a2d_lambda)
                }
            }
            _ => ValueInput::Guider,
        }
    }

    /// Whether the guider policy takes part in the loss.
    pub fn trains_guider(self) -> bool {
        !matches!(self, Algorithm::Ppo | Algorithm::PpoAsym)
    }

    pub fn needs_aux_head(self) -> bool {
        self == Algorithm::AdvisorCo
    }

    /// Whether α follows the adaptive KL schedule after each iteration.
    pub fn adapts_alpha(self) -> bool {
        matches!(self, Algorithm::GpoPenalty | Algorithm::GpoNaive | Algorithm::GpoAblation)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Inner interval of the double clip on `mu / pi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerClip {
    /// `(1 - delta, 1 + delta)`
    Delta(f64),
    /// `(1 / rho, rho)`
    Ratio(f64),
}

impl InnerClip {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            InnerClip::Delta(d) => (1.0 - d, 1.0 + d),
            InnerClip::Ratio(r) => (1.0 / r, r),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    Computed,
    /// Apply the backtracking KL to every sample.
    ForceOn,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub clip_eps: f64,
    pub inner: InnerClip,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub advisor_alpha_w: f64,
    pub a2d_lambda: f64,
    pub mask: MaskMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            inner: InnerClip::Ratio(1.1),
            entropy_coef: 0.0,
            value_coef: 1.0,
            advisor_alpha_w: 10.0,
            a2d_lambda: 0.0,
            mask: MaskMode::Computed,
        }
    }
}

/// Weighted loss parts and diagnostics. `guider_backtrack`, `learner_rl`,
/// `learner_bc` and `aux_bc` already include their coefficients; `value_mse`
/// and `entropy` are raw, so
/// `total = guider_rl + guider_backtrack + learner_rl + learner_bc + aux_bc
///        + value_coef * value_mse - entropy_coef * entropy`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub guider_rl: f64,
    pub guider_backtrack: f64,
    pub learner_rl: f64,
    pub learner_bc: f64,
    pub aux_bc: f64,
    pub value_mse: f64,
    pub entropy: f64,
    pub total: f64,
    pub alpha: f64,
    pub mean_kl_mu_pi: f64,
    pub clip_fraction: f64,
    pub inner_clip_fraction: f64,
    /// Mean `|1 - pi(a|o_l) / beta(a)|` over the minibatch.
    pub rho_pi_dev: f64,
}

impl LossBreakdown {
    pub const COLUMNS: [&'static str; 13] = [
        "guider_rl",
        "guider_backtrack",
        "learner_rl",
        "learner_bc",
        "aux_bc",
        "value_mse",
        "entropy",
        "total",
        "alpha",
        "mean_kl_mu_pi",
        "clip_fraction",
        "inner_clip_fraction",
        "rho_pi_dev",
    ];

    pub fn values(&self) -> [f64; 13] {
        [
            self.guider_rl,
            self.guider_backtrack,
            self.learner_rl,
            self.learner_bc,
            self.aux_bc,
            self.value_mse,
            self.entropy,
            self.total,
            self.alpha,
            self.mean_kl_mu_pi,
            self.clip_fraction,
            self.inner_clip_fraction,
            self.rho_pi_dev,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|x| x.is_finite())
    }

    /// Element-wise mean of several breakdowns.
    pub fn mean(parts: &[LossBreakdown]) -> LossBreakdown {
        let n = parts.len().max(1) as f64;
        let mut acc = [0.0; 13];
        for p in parts {
            for (a, v) in acc.iter_mut().zip(p.values()) {
                *a += v / n;
            }
        }
        LossBreakdown {
            guider_rl: acc[0],
            guider_backtrack: acc[1],
            learner_rl: acc[2],
            learner_bc: acc[3],
            aux_bc: acc[4],
            value_mse: acc[5],
            entropy: acc[6],
            total: acc[7],
            alpha: acc[8],
            mean_kl_mu_pi: acc[9],
            clip_fraction: acc[10],
            inner_clip_fraction: acc[11],
            rho_pi_dev: acc[12],
        }
    }
}

/// Rows of a [`Batch`] selected for one gradient step.
#[derive(Clone, Debug)]
pub struct MiniBatch {
    pub guider_obs: Array2<f64>,
    pub learner_obs: Array2<f64>,
    pub actions: ActionBatch,
    pub behavior_logprob: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl MiniBatch {
    pub fn from_batch(batch: &Batch, idx: &[usize]) -> Self {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            guider_obs: crate::rollout::take_rows(&batch.guider_obs, idx),
            learner_obs: crate::rollout::take_rows(&batch.learner_obs, idx),
            actions: batch.actions.select(idx),
            behavior_logprob: pick(&batch.behavior_logprob),
            advantages: pick(&batch.advantages),
            returns: pick(&batch.returns),
        }
    }

    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }
}

fn column(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap()
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
}

// ---------------------------------------------------------------------------
// Scalar building blocks

/// `-mean(min(rho * A, clip(rho, 1 - eps, 1 + eps) * A))` with
/// `rho = exp(logp_new - logp_beta)`. Returns the loss and clip fraction.
pub fn ppo_surrogate(logp_new: &[f64], logp_beta: &[f64], adv: &[f64], eps: f64) -> Result<(f64, f64), ObjectiveError> {
    let n = adv.len();
    let mut total = 0.0;
    let mut clipped = 0usize;
    for i in 0..n {
        let rho = (logp_new[i] - logp_beta[i]).exp();
        if !rho.is_finite() {
            return Err(ObjectiveError::NonFiniteRatio(i));
        }
        let c = rho.clamp(1.0 - eps, 1.0 + eps);
        if c != rho {
            clipped += 1;
        }
        total += (rho * adv[i]).min(c * adv[i]);
    }
    Ok((-total / n as f64, clipped as f64 / n as f64))
}

/// Mean `KL(mu || pi)` over aligned distribution lists.
pub fn bc_kl(mu: &[ActionDist], pi: &[ActionDist]) -> Result<f64, ObjectiveError> {
    let mut total = 0.0;
    for (m, p) in mu.iter().zip(pi) {
        total += m.kl(p)?;
    }
    Ok(total / mu.len() as f64)
}

/// `clip(clip(mu/pi, lo, hi) * pi/beta, 1 - eps, 1 + eps)`.
pub fn double_clip_ratio(mu: f64, pi: f64, beta: f64, inner: InnerClip, eps: f64) -> Result<f64, ObjectiveError> {
    if !(mu > 0.0 && pi > 0.0 && beta > 0.0) {
        return Err(ObjectiveError::NonPositive);
    }
    let (lo, hi) = inner.bounds();
    Ok(((mu / pi).clamp(lo, hi) * (pi / beta)).clamp(1.0 - eps, 1.0 + eps))
}

/// True when the inner clip halts the guider update for this sample.
pub fn halting_conditions_hold(mu: f64, pi: f64, adv: f64, inner: InnerClip) -> bool {
    let (lo, hi) = inner.bounds();
    (adv > 0.0 && mu > pi * hi) || (adv < 0.0 && mu < pi * lo)
}

/// 1 when `mu / pi` lies outside the open inner interval, else 0.
pub fn backtrack_mask(mu: f64, pi: f64, inner: InnerClip) -> f64 {
    let (lo, hi) = inner.bounds();
    let r = mu / pi;
    if r > lo && r < hi {
        0.0
    } else {
        1.0
    }
}

pub const ALPHA_MIN: f64 = 1e-3;
pub const ALPHA_MAX: f64 = 1e3;

/// Adaptive coefficient on the backtracking and learner-RL terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaState {
    pub alpha: f64,
    pub d: f64,
    pub k: f64,
}

impl AlphaState {
    pub fn update(self, measured_l3: f64) -> AlphaState {
        let mut alpha = self.alpha;
        if measured_l3 > self.k * self.d {
            alpha *= self.k;
        } else if measured_l3 < self.d / self.k {
            alpha /= self.k;
        }
        AlphaState {
            alpha: alpha.clamp(ALPHA_MIN, ALPHA_MAX),
            ..self
        }
    }
}

// ---------------------------------------------------------------------------
// Tape losses

/// Per-sample `-min(rho * A, clip(rho) * A)` as `B x 1`.
fn ppo_terms(tape: &mut Tape, logp: Var, logp_beta: Var, adv: Var, eps: f64) -> Var {
    let diff = tape.sub(logp, logp_beta);
    let rho = tape.exp(diff);
    let t1 = tape.mul(rho, adv);
    let c = tape.clip(rho, 1.0 - eps, 1.0 + eps);
    let t2 = tape.mul(c, adv);
    let m = tape.min(t1, t2);
    tape.scale(m, -1.0)
}

/// Per-sample guider term with the double clip, `B x 1`.
fn double_clip_terms(tape: &mut Tape, logp_mu: Var, logp_pi_stop: Var, logp_beta: Var, adv: Var, inner: InnerClip, eps: f64) -> Var {
    let (lo, hi) = inner.bounds();
    let d = tape.sub(logp_mu, logp_beta);
    let rho = tape.exp(d);
    let t1 = tape.mul(rho, adv);
    let d_in = tape.sub(logp_mu, logp_pi_stop);
    let r_in = tape.exp(d_in);
    let c_in = tape.clip(r_in, lo, hi);
    let d_pb = tape.sub(logp_pi_stop, logp_beta);
    let pb = tape.exp(d_pb);
    let prod = tape.mul(c_in, pb);
    let outer = tape.clip(prod, 1.0 - eps, 1.0 + eps);
    let t2 = tape.mul(outer, adv);
    let m = tape.min(t1, t2);
    tape.scale(m, -1.0)
}

/// Which side of `KL(mu || pi)` receives gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KlGrad {
    Guider,
    Learner,
}

/// Mean `KL(mu || pi)` on the tape with the other side detached.
pub fn bc_kl_tape(tape: &mut Tape, mu: TapeDist, pi: TapeDist, grad_to: KlGrad) -> Result<Var, NnError> {
    let (mu, pi) = match grad_to {
        KlGrad::Guider => (mu, pi.stop_gradient(tape)),
        KlGrad::Learner => (mu.stop_gradient(tape), pi),
    };
    let kl = TapeDist::kl(tape, &mu, &pi)?;
    Ok(tape.mean(kl))
}

/// Result of evaluating a loss on one minibatch.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub breakdown: LossBreakdown,
    pub grad: Option<Vec<f64>>,
    /// Fingerprint of every clip/min branch taken; finite differences are
    /// only meaningful between evaluations with equal fingerprints.
    pub branch_hash: u64,
}

/// Evaluates `algo`'s loss and, if `want_grad`, its gradient with respect to
/// `params`. With `frozen = Some(p)` the stop-gradient side of every term is
/// computed from `p` instead of detaching the live nodes; at `p == params`
/// both forms give identical values and gradients.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    algo: Algorithm,
    cfg: &LossConfig,
    alpha: f64,
    net: &PolicyNet,
    params: &ParamVector,
    mb: &MiniBatch,
    frozen: Option<&ParamVector>,
    want_grad: bool,
) -> Result<LossEval, ObjectiveError> {
    let n = mb.len();
    let mut tape = Tape::new();
    let p = tape.param(row(&params.0));
    let pf = frozen.map(|f| tape.constant(row(&f.0)));
    let g_in = tape.constant(mb.guider_obs.clone());
    let l_in = tape.constant(mb.learner_obs.clone());
    let adv = tape.constant(column(&mb.advantages));
    let lbeta = tape.constant(column(&mb.behavior_logprob));
    let ret = tape.constant(column(&mb.returns));

    let (pi, aux) = if algo.needs_aux_head() {
        let (pi, aux) = net.policy_and_aux_tape(&mut tape, p, l_in)?;
        (pi, Some(aux))
    } else {
        (net.policy_tape(&mut tape, p, l_in)?, None)
    };
    let mu = if algo.trains_guider() { Some(net.policy_tape(&mut tape, p, g_in)?) } else { None };
    let detach = |tape: &mut Tape, live: TapeDist, input: Var| -> Result<TapeDist, NnError> {
        match pf {
            None => Ok(live.stop_gradient(tape)),
            Some(f) => net.policy_tape(tape, f, input),
        }
    };

    let lpi = pi.log_prob(&mut tape, &mb.actions)?;
    let zero = tape.scalar_constant(0.0);
    let mut bd = LossBreakdown { alpha, ..LossBreakdown::default() };

    let (mut guider_rl, mut guider_bt, mut learner_rl, mut learner_bc, mut aux_bc) = (zero, zero, zero, zero, zero);
    let lpi_vals = tape.value(lpi).column(0).to_vec();
    bd.rho_pi_dev = lpi_vals.iter().zip(&mb.behavior_logprob).map(|(l, b)| (1.0 - (l - b).exp()).abs()).sum::<f64>() / n as f64;

    let entropy_src;
    if let Some(mu) = mu {
        let lmu = mu.log_prob(&mut tape, &mb.actions)?;
        let pi_stop = detach(&mut tape, pi, l_in)?;
        let mu_stop = detach(&mut tape, mu, g_in)?;
        let kl_guider = TapeDist::kl(&mut tape, &mu, &pi_stop)?;
        let lmu_vals = tape.value(lmu).column(0).to_vec();
        bd.mean_kl_mu_pi = tape.value(kl_guider).mean().unwrap();

        // The mask is a stop-gradient quantity, so it reads the detached side.
        let lmu_stop = mu_stop.log_prob(&mut tape, &mb.actions)?;
        let lpi_stop_vals = {
            let l = pi_stop.log_prob(&mut tape, &mb.actions)?;
            tape.value(l).column(0).to_vec()
        };
        let (lo, hi) = cfg.inner.bounds();
        let mask: Vec<f64> = tape
            .value(lmu_stop)
            .column(0)
            .iter()
            .zip(&lpi_stop_vals)
            .map(|(m, p)| {
                let r = (m - p).exp();
                if r > lo && r < hi {
                    0.0
                } else {
                    1.0
                }
            })
            .collect();
        bd.inner_clip_fraction = mask.iter().sum::<f64>() / n as f64;
        let trained = if algo.behavior(cfg.a2d_lambda) == Behavior::Guider { &lmu_vals } else { &lpi_vals };
        bd.clip_fraction = clip_fraction(trained, &mb.behavior_logprob, cfg.clip_eps);

        guider_rl = match algo {
            Algorithm::GpoClip => {
                let lpi_stop = pi_stop.log_prob(&mut tape, &mb.actions)?;
                let t = double_clip_terms(&mut tape, lmu, lpi_stop, lbeta, adv, cfg.inner, cfg.clip_eps);
                tape.mean(t)
            }
            _ => {
                let t = ppo_terms(&mut tape, lmu, lbeta, adv, cfg.clip_eps);
                tape.mean(t)
            }
        };

        guider_bt = match algo {
            Algorithm::GpoPenalty | Algorithm::GpoNaive | Algorithm::GpoAblation => {
                let m = tape.mean(kl_guider);
                tape.scale(m, alpha)
            }
            Algorithm::GpoClip => {
                let m = match cfg.mask {
                    MaskMode::Computed => column(&mask),
                    MaskMode::ForceOn => Array2::ones((n, 1)),
                };
                let m = tape.constant(m);
                let masked = tape.mul(kl_guider, m);
                tape.mean(masked)
            }
            _ => zero,
        };

        learner_bc = match algo {
            Algorithm::GpoPenalty | Algorithm::GpoClip | Algorithm::GpoNaive | Algorithm::PpoBc | Algorithm::A2d => {
                let kl = TapeDist::kl(&mut tape, &mu_stop, &pi)?;
                tape.mean(kl)
            }
            Algorithm::AdvisorCo => {
                let aux = aux.expect("aux head present");
                let kl = TapeDist::kl(&mut tape, &mu_stop, &aux)?;
                aux_bc = tape.mean(kl);
                let aux_kl = match pf {
                    None => tape.value(kl).column(0).to_vec(),
                    Some(f) => {
                        let (_, aux_frozen) = net.policy_and_aux_tape(&mut tape, f, l_in)?;
                        let kl = TapeDist::kl(&mut tape, &mu_stop, &aux_frozen)?;
                        tape.value(kl).column(0).to_vec()
                    }
                };
                let w: Vec<f64> = aux_kl.iter().map(|k| (-cfg.advisor_alpha_w * k).exp()).collect();
                let one_minus: Vec<f64> = w.iter().map(|w| 1.0 - w).collect();
                let wv = tape.constant(column(&w));
                let ce = TapeDist::cross_entropy(&mut tape, &mu_stop, &pi)?;
                let weighted = tape.mul(ce, wv);
                let bc = tape.mean(weighted);
                let rl = ppo_terms(&mut tape, lpi, lbeta, adv, cfg.clip_eps);
                let omw = tape.constant(column(&one_minus));
                let rl = tape.mul(rl, omw);
                learner_rl = tape.mean(rl);
                bc
            }
            _ => zero,
        };

        learner_rl = match algo {
            Algorithm::GpoPenalty | Algorithm::GpoClip => {
                let t = ppo_terms(&mut tape, lpi, lbeta, adv, cfg.clip_eps);
                let m = tape.mean(t);
                tape.scale(m, alpha)
            }
            Algorithm::GpoAblation => {
                let t = ppo_terms(&mut tape, lpi, lbeta, adv, cfg.clip_eps);
                tape.mean(t)
            }
            _ => learner_rl,
        };
        entropy_src = if algo.behavior(cfg.a2d_lambda) == Behavior::Guider { mu } else { pi };
    } else {
        let t = ppo_terms(&mut tape, lpi, lbeta, adv, cfg.clip_eps);
        learner_rl = tape.mean(t);
        bd.clip_fraction = clip_fraction(&lpi_vals, &mb.behavior_logprob, cfg.clip_eps);
        entropy_src = pi;
    }

    let v = match algo.value_input(cfg.a2d_lambda) {
        ValueInput::Guider => net.value_tape(&mut tape, p, g_in)?,
        ValueInput::Learner => net.value_tape(&mut tape, p, l_in)?,
        ValueInput::Mixture(lam) => {
            let vg = net.value_tape(&mut tape, p, g_in)?;
            let vl = net.value_tape(&mut tape, p, l_in)?;
            let a = tape.scale(vg, lam);
            let b = tape.scale(vl, 1.0 - lam);
            tape.add(a, b)
        }
    };
    let err = tape.sub(v, ret);
    let sq = tape.square(err);
    let value_mse = tape.mean(sq);
    let ent = entropy_src.entropy(&mut tape);
    let entropy = tape.mean(ent);

    let mut total = tape.add(guider_rl, guider_bt);
    total = tape.add(total, learner_rl);
    total = tape.add(total, learner_bc);
    total = tape.add(total, aux_bc);
    let vterm = tape.scale(value_mse, cfg.value_coef);
    total = tape.add(total, vterm);
    let eterm = tape.scale(entropy, -cfg.entropy_coef);
    total = tape.add(total, eterm);

    bd.guider_rl = tape.scalar(guider_rl);
    bd.guider_backtrack = tape.scalar(guider_bt);
    bd.learner_rl = tape.scalar(learner_rl);
    bd.learner_bc = tape.scalar(learner_bc);
    bd.aux_bc = tape.scalar(aux_bc);
    bd.value_mse = tape.scalar(value_mse);
    bd.entropy = tape.scalar(entropy);
    bd.total = tape.scalar(total);

    let grad = if want_grad {
        let g = tape.backward(total)?;
        Some(match g.wrt(p) {
            Some(m) => m.iter().copied().collect(),
            None => vec![0.0; params.len()],
        })
    } else if let Some(op) = tape.non_finite() {
        return Err(NnError::NonFinite { op }.into());
    } else {
        None
    };
    Ok(LossEval { breakdown: bd, grad, branch_hash: tape.branch_hash() })
}

fn clip_fraction(logp: &[f64], logp_beta: &[f64], eps: f64) -> f64 {
    let n = logp.len();
    logp.iter()
        .zip(logp_beta)
        .filter(|(l, b)| ((*l - *b).exp() - 1.0).abs() > eps)
        .count() as f64
        / n as f64
}
