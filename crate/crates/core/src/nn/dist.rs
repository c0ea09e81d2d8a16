//! Action distributions, both as plain values (for acting and evaluation)
//! and as tape nodes (for losses). The two paths perform the same floating
//! point operations in the same order so recorded log-probabilities can be
//! recomputed exactly during the update.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::Head;
use super::tape::{softmax_rows, Tape, Var};
use super::NnError;

/// Lower bound applied to categorical probabilities before renormalizing.
pub const PROB_FLOOR: f64 = 1e-8;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn discrete(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            Action::Continuous(_) => None,
        }
    }
}

/// A batch of actions aligned with a batch of inputs.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionBatch {
    Discrete(Vec<usize>),
    Continuous(Array2<f64>),
}

impl ActionBatch {
    pub fn len(&self) -> usize {
        match self {
            ActionBatch::Discrete(v) => v.len(),
            ActionBatch::Continuous(m) => m.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> ActionBatch {
        match self {
            ActionBatch::Discrete(v) => ActionBatch::Discrete(idx.iter().map(|&i| v[i]).collect()),
            ActionBatch::Continuous(m) => ActionBatch::Continuous(m.select(Axis(0), idx)),
        }
    }

    /// Packs same-kind actions; `None` if kinds or widths are mixed.
    pub fn from_actions(actions: &[Action]) -> Option<ActionBatch> {
        match actions.first() {
            None | Some(Action::Discrete(_)) => actions.iter().map(Action::discrete).collect::<Option<Vec<_>>>().map(ActionBatch::Discrete),
            Some(Action::Continuous(first)) => {
                let dim = first.len();
                let mut flat = Vec::with_capacity(actions.len() * dim);
                for a in actions {
                    match a {
                        Action::Continuous(v) if v.len() == dim => flat.extend_from_slice(v),
                        _ => return None,
                    }
                }
                Array2::from_shape_vec((actions.len(), dim), flat).ok().map(ActionBatch::Continuous)
            }
        }
    }

    pub fn get(&self, i: usize) -> Action {
        match self {
            ActionBatch::Discrete(v) => Action::Discrete(v[i]),
            ActionBatch::Continuous(m) => Action::Continuous(m.row(i).to_vec()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ActionDist {
    Categorical { probs: Vec<f64> },
    DiagGaussian { mean: Vec<f64>, log_std: Vec<f64> },
}

/// Floored categorical probabilities from logits, row by row.
pub fn categorical_probs(logits: &Array2<f64>) -> Array2<f64> {
    let floored = softmax_rows(logits).mapv(|x| x.clamp(PROB_FLOOR, f64::INFINITY));
    let total = floored.sum_axis(Axis(1)).insert_axis(Axis(1));
    floored / total
}

impl ActionDist {
    /// Builds one distribution per row of raw head outputs.
    pub fn from_raw_batch(head: Head, raw: ArrayView2<f64>) -> Result<Vec<ActionDist>, NnError> {
        match head {
            Head::Categorical { n_actions } => {
                if raw.ncols() != n_actions {
                    return Err(NnError::Contract("raw width does not match categorical head".into()));
                }
                let p = categorical_probs(&raw.to_owned());
                Ok(p.rows().into_iter().map(|r| ActionDist::Categorical { probs: r.to_vec() }).collect())
            }
            Head::DiagGaussian { action_dim } => {
                if raw.ncols() != 2 * action_dim {
                    return Err(NnError::Contract("raw width does not match gaussian head".into()));
                }
                Ok(raw
                    .rows()
                    .into_iter()
                    .map(|r| ActionDist::DiagGaussian {
                        mean: r.slice(ndarray::s![..action_dim]).to_vec(),
                        log_std: r
                            .slice(ndarray::s![action_dim..])
                            .iter()
                            .map(|x| x.clamp(LOG_STD_MIN, LOG_STD_MAX))
                            .collect(),
                    })
                    .collect())
            }
            Head::Value => Err(NnError::Contract("value head has no action distribution".into())),
        }
    }

    pub fn from_raw(head: Head, raw: ArrayView1<f64>) -> Result<ActionDist, NnError> {
        let row = raw.insert_axis(Axis(0));
        Ok(Self::from_raw_batch(head, row)?.remove(0))
    }

    pub fn uniform(n: usize) -> ActionDist {
        ActionDist::Categorical {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn log_prob(&self, action: &Action) -> Result<f64, NnError> {
        match (self, action) {
            (ActionDist::Categorical { probs }, Action::Discrete(a)) => probs
                .get(*a)
                .map(|p| p.ln())
                .ok_or_else(|| NnError::Contract(format!("action {a} out of range"))),
            (ActionDist::DiagGaussian { mean, log_std }, Action::Continuous(a)) => {
                if a.len() != mean.len() {
                    return Err(NnError::Contract("action dimension mismatch".into()));
                }
                Ok(gaussian_log_prob(mean, log_std, a))
            }
            _ => Err(NnError::Contract("action kind does not match distribution".into())),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        match self {
            ActionDist::Categorical { probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return Action::Discrete(i);
                    }
                }
                Action::Discrete(probs.len() - 1)
            }
            ActionDist::DiagGaussian { mean, log_std } => Action::Continuous(
                mean.iter()
                    .zip(log_std)
                    .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            ),
        }
    }

    /// Most likely action; ties go to the lowest index.
    pub fn mode(&self) -> Action {
        match self {
            ActionDist::Categorical { probs } => {
                let mut best = 0;
                for (i, p) in probs.iter().enumerate() {
                    if *p > probs[best] {
                        best = i;
                    }
                }
                Action::Discrete(best)
            }
            ActionDist::DiagGaussian { mean, .. } => Action::Continuous(mean.clone()),
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            ActionDist::Categorical { probs } => -probs.iter().map(|p| p * p.ln()).sum::<f64>(),
            ActionDist::DiagGaussian { log_std, .. } => {
                log_std.iter().map(|ls| ls + 0.5 * (1.0 + (2.0 * PI).ln())).sum()
            }
        }
    }

    /// `KL(self || other)`.
    pub fn kl(&self, other: &ActionDist) -> Result<f64, NnError> {
        match (self, other) {
            (ActionDist::Categorical { probs: p }, ActionDist::Categorical { probs: q }) => {
                if p.len() != q.len() {
                    return Err(NnError::Contract("categorical sizes differ".into()));
                }
                Ok(p.iter().zip(q).map(|(a, b)| a * (a.ln() - b.ln())).sum::<f64>().max(0.0))
            }
            (
                ActionDist::DiagGaussian { mean: m1, log_std: s1 },
                ActionDist::DiagGaussian { mean: m2, log_std: s2 },
            ) => {
                if m1.len() != m2.len() {
                    return Err(NnError::Contract("gaussian dimensions differ".into()));
                }
                let mut kl = 0.0;
                for i in 0..m1.len() {
                    let (v1, v2) = ((2.0 * s1[i]).exp(), (2.0 * s2[i]).exp());
                    let d = m1[i] - m2[i];
                    kl += s2[i] - s1[i] + (v1 + d * d) / (2.0 * v2) - 0.5;
                }
                Ok(kl.max(0.0))
            }
            _ => Err(NnError::Contract("distribution kinds differ".into())),
        }
    }
}

fn gaussian_log_prob(mean: &[f64], log_std: &[f64], a: &[f64]) -> f64 {
    // term order mirrors `TapeDist::log_prob`
    let half_log_2pi = 0.5 * (2.0 * PI).ln();
    let per_dim = Array2::from_shape_fn((1, mean.len()), |(_, i)| {
        let z = (a[i] - mean[i]) * (-log_std[i]).exp();
        -0.5 * (z * z) - log_std[i] - half_log_2pi
    });
    per_dim.sum_axis(Axis(1))[0]
}

/// Distribution parameters living on a tape, one row per sample.
#[derive(Clone, Copy, Debug)]
pub enum TapeDist {
    Categorical { probs: Var, log_probs: Var },
    DiagGaussian { mean: Var, log_std: Var },
}

impl TapeDist {
    pub fn from_raw(tape: &mut Tape, head: Head, raw: Var) -> Result<TapeDist, NnError> {
        match head {
            Head::Categorical { .. } => {
                let soft = tape.softmax(raw);
                let floored = tape.clip(soft, PROB_FLOOR, f64::INFINITY);
                let total = tape.sum_rows(floored);
                let probs = tape.div(floored, total);
                let log_probs = tape.log(probs);
                Ok(TapeDist::Categorical { probs, log_probs })
            }
            Head::DiagGaussian { action_dim } => {
                let mean = tape.slice_cols(raw, 0, action_dim);
                let ls = tape.slice_cols(raw, action_dim, action_dim);
                let log_std = tape.clip(ls, LOG_STD_MIN, LOG_STD_MAX);
                Ok(TapeDist::DiagGaussian { mean, log_std })
            }
            Head::Value => Err(NnError::Contract("value head has no action distribution".into())),
        }
    }

    pub fn stop_gradient(self, tape: &mut Tape) -> TapeDist {
        match self {
            TapeDist::Categorical { probs, log_probs } => TapeDist::Categorical {
                probs: tape.stop_gradient(probs),
                log_probs: tape.stop_gradient(log_probs),
            },
            TapeDist::DiagGaussian { mean, log_std } => TapeDist::DiagGaussian {
                mean: tape.stop_gradient(mean),
                log_std: tape.stop_gradient(log_std),
            },
        }
    }

    pub fn batch_size(&self, tape: &Tape) -> usize {
        match self {
            TapeDist::Categorical { probs, .. } => tape.value(*probs).nrows(),
            TapeDist::DiagGaussian { mean, .. } => tape.value(*mean).nrows(),
        }
    }

    /// `B x 1` log-density of the given actions.
    pub fn log_prob(&self, tape: &mut Tape, actions: &ActionBatch) -> Result<Var, NnError> {
        match (self, actions) {
            (TapeDist::Categorical { log_probs, .. }, ActionBatch::Discrete(a)) => {
                let n = tape.value(*log_probs).ncols();
                if a.iter().any(|&x| x >= n) {
                    return Err(NnError::Contract("action index out of range".into()));
                }
                Ok(tape.gather(*log_probs, a))
            }
            (TapeDist::DiagGaussian { mean, log_std }, ActionBatch::Continuous(a)) => {
                let half_log_2pi = 0.5 * (2.0 * PI).ln();
                let act = tape.constant(a.clone());
                let diff = tape.sub(act, *mean);
                let neg_ls = tape.scale(*log_std, -1.0);
                let inv_std = tape.exp(neg_ls);
                let z = tape.mul(diff, inv_std);
                let z2 = tape.square(z);
                let quad = tape.scale(z2, -0.5);
                let per_dim = tape.sub(quad, *log_std);
                let per_dim = tape.add_scalar(per_dim, -half_log_2pi);
                Ok(tape.sum_rows(per_dim))
            }
            _ => Err(NnError::Contract("action kind does not match distribution".into())),
        }
    }

    pub fn entropy(&self, tape: &mut Tape) -> Var {
        match self {
            TapeDist::Categorical { probs, log_probs } => {
                let plogp = tape.mul(*probs, *log_probs);
                let s = tape.sum_rows(plogp);
                tape.scale(s, -1.0)
            }
            TapeDist::DiagGaussian { log_std, .. } => {
                let per_dim = tape.add_scalar(*log_std, 0.5 * (1.0 + (2.0 * PI).ln()));
                tape.sum_rows(per_dim)
            }
        }
    }

    /// Per-sample `KL(p || q)` as a `B x 1` node.
    pub fn kl(tape: &mut Tape, p: &TapeDist, q: &TapeDist) -> Result<Var, NnError> {
        match (p, q) {
            (
                TapeDist::Categorical {
                    probs: pp,
                    log_probs: lp,
                },
                TapeDist::Categorical { log_probs: lq, .. },
            ) => {
                let diff = tape.sub(*lp, *lq);
                let w = tape.mul(*pp, diff);
                Ok(tape.sum_rows(w))
            }
            (
                TapeDist::DiagGaussian { mean: m1, log_std: s1 },
                TapeDist::DiagGaussian { mean: m2, log_std: s2 },
            ) => {
                let two_s1 = tape.scale(*s1, 2.0);
                let v1 = tape.exp(two_s1);
                let two_s2 = tape.scale(*s2, 2.0);
                let v2 = tape.exp(two_s2);
                let d = tape.sub(*m1, *m2);
                let d2 = tape.square(d);
                let num = tape.add(v1, d2);
                let den = tape.scale(v2, 2.0);
                let frac = tape.div(num, den);
                let ls = tape.sub(*s2, *s1);
                let t = tape.add(ls, frac);
                let t = tape.add_scalar(t, -0.5);
                Ok(tape.sum_rows(t))
            }
            _ => Err(NnError::Contract("distribution kinds differ".into())),
        }
    }

    /// Per-sample cross-entropy `-sum_a p(a) log q(a)` (categorical only;
    /// for Gaussians returns `KL(p||q) + H(p)`).
    pub fn cross_entropy(tape: &mut Tape, p: &TapeDist, q: &TapeDist) -> Result<Var, NnError> {
        match (p, q) {
            (TapeDist::Categorical { probs, .. }, TapeDist::Categorical { log_probs, .. }) => {
                let w = tape.mul(*probs, *log_probs);
                let s = tape.sum_rows(w);
                Ok(tape.scale(s, -1.0))
            }
            _ => {
                let kl = Self::kl(tape, p, q)?;
                let h = p.entropy(tape);
                Ok(tape.add(kl, h))
            }
        }
    }
}
