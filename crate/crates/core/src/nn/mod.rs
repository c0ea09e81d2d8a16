//! Dense networks, action distributions and the reverse-mode tape they are
//! differentiated on.

mod adam;
pub mod dist;
pub mod mlp;
pub mod tape;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{clip_grad_norm, Adam};
pub use dist::{Action, ActionBatch, ActionDist, TapeDist};
pub use mlp::{Activation, Head, MlpSpec};
pub use tape::{grad, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },
}

/// Flat parameter storage for every network a [`PolicyNet`] owns.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Guider input `[s, o, 1]`.
pub fn guider_input(state: &[f64], obs: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(state.len() + obs.len() + 1);
    v.extend_from_slice(state);
    v.extend_from_slice(obs);
    v.push(1.0);
    v
}

/// Learner input `[0, o, 0]`; only the width of the privileged block is used.
pub fn learner_input(state_dim: usize, obs: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; state_dim];
    v.extend_from_slice(obs);
    v.push(0.0);
    v
}

/// Architecture for an actor-critic pair sharing one input convention.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetShape {
    pub hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetShape {
    fn default() -> Self {
        Self {
            hidden: vec![128],
            value_hidden: vec![128],
            activation: Activation::LeakyRelu,
        }
    }
}

/// One policy network shared by guider and learner, a value network, and
/// optionally an auxiliary linear head on the policy trunk.
///
/// Layout of the parameter vector: policy block, then value block, then the
/// auxiliary head (`trunk x width` weights, `width` biases) when present.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    pub policy: MlpSpec,
    pub value: MlpSpec,
    pub aux_head: bool,
    pub state_dim: usize,
    pub obs_dim: usize,
}

/// Gains for orthogonal initialization.
pub const HIDDEN_GAIN: f64 = std::f64::consts::SQRT_2;
pub const POLICY_OUTPUT_GAIN: f64 = 0.01;
pub const VALUE_OUTPUT_GAIN: f64 = 1.0;

impl PolicyNet {
    pub fn new(state_dim: usize, obs_dim: usize, head: Head, shape: &NetShape, aux_head: bool) -> Result<Self, NnError> {
        let input = state_dim + obs_dim + 1;
        Ok(Self {
            policy: MlpSpec::with_hidden(input, &shape.hidden, shape.activation, head)?,
            value: MlpSpec::with_hidden(input, &shape.value_hidden, shape.activation, Head::Value)?,
            aux_head,
            state_dim,
            obs_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.state_dim + self.obs_dim + 1
    }

    pub fn head(&self) -> Head {
        self.policy.head()
    }

    pub fn value_offset(&self) -> usize {
        self.policy.n_params()
    }

    pub fn aux_offset(&self) -> usize {
        self.policy.n_params() + self.value.n_params()
    }

    fn aux_params(&self) -> usize {
        if self.aux_head {
            let w = self.policy.head().width();
            self.policy.trunk_width() * w + w
        } else {
            0
        }
    }

    pub fn n_params(&self) -> usize {
        self.aux_offset() + self.aux_params()
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut p = self.policy.init(rng, HIDDEN_GAIN, POLICY_OUTPUT_GAIN);
        p.extend(self.value.init(rng, HIDDEN_GAIN, VALUE_OUTPUT_GAIN));
        if self.aux_head {
            let w = self.policy.head().width();
            p.extend(mlp::orthogonal(rng, self.policy.trunk_width(), w, POLICY_OUTPUT_GAIN));
            p.extend(std::iter::repeat_n(0.0, w));
        }
        ParamVector(p)
    }

    fn check(&self, params: &ParamVector) -> Result<(), NnError> {
        if params.len() != self.n_params() {
            return Err(NnError::Contract(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        Ok(())
    }

    /// Action distributions for a batch of inputs.
    pub fn policy_dists(&self, params: &ParamVector, inputs: ArrayView2<f64>) -> Result<Vec<ActionDist>, NnError> {
        self.check(params)?;
        let raw = self.policy.forward(&params.0, inputs)?;
        ActionDist::from_raw_batch(self.head(), raw.view())
    }

    pub fn values(&self, params: &ParamVector, inputs: ArrayView2<f64>) -> Result<Vec<f64>, NnError> {
        self.check(params)?;
        let out = self.value.forward(&params.0[self.value_offset()..], inputs)?;
        Ok(out.column(0).to_vec())
    }

    /// Auxiliary-head distributions; errors when the head is absent.
    pub fn aux_dists(&self, params: &ParamVector, inputs: ArrayView2<f64>) -> Result<Vec<ActionDist>, NnError> {
        self.check(params)?;
        if !self.aux_head {
            return Err(NnError::Contract("network has no auxiliary head".into()));
        }
        let (_, trunk) = self.policy.forward_with_trunk(&params.0, inputs)?;
        let w = self.head().width();
        let t = self.policy.trunk_width();
        let off = self.aux_offset();
        let wm = ArrayView2::from_shape((t, w), &params.0[off..off + t * w]).unwrap();
        let b = ArrayView2::from_shape((1, w), &params.0[off + t * w..off + t * w + w]).unwrap();
        let raw = &trunk.dot(&wm) + &b;
        ActionDist::from_raw_batch(self.head(), raw.view())
    }

    /// Policy distribution on the tape.
    pub fn policy_tape(&self, tape: &mut Tape, params: Var, inputs: Var) -> Result<TapeDist, NnError> {
        let raw = self.policy.forward_tape(tape, params, 0, inputs)?;
        TapeDist::from_raw(tape, self.head(), raw)
    }

    /// Policy and auxiliary-head distributions from one trunk evaluation.
    pub fn policy_and_aux_tape(&self, tape: &mut Tape, params: Var, inputs: Var) -> Result<(TapeDist, TapeDist), NnError> {
        if !self.aux_head {
            return Err(NnError::Contract("network has no auxiliary head".into()));
        }
        let (raw, trunk) = self.policy.forward_tape_with_trunk(tape, params, 0, inputs)?;
        let w = self.head().width();
        let t = self.policy.trunk_width();
        let off = self.aux_offset();
        let wm = tape.block(params, off, t, w);
        let b = tape.block(params, off + t * w, 1, w);
        let z = tape.matmul(trunk, wm);
        let aux_raw = tape.add(z, b);
        Ok((
            TapeDist::from_raw(tape, self.head(), raw)?,
            TapeDist::from_raw(tape, self.head(), aux_raw)?,
        ))
    }

    /// `B x 1` value estimates on the tape.
    pub fn value_tape(&self, tape: &mut Tape, params: Var, inputs: Var) -> Result<Var, NnError> {
        self.value.forward_tape(tape, params, self.value_offset(), inputs)
    }

    /// Stable description of every block, used to tag serialized parameters.
    pub fn descriptor(&self) -> String {
        format!(
            "policy={};value={};aux={};state_dim={};obs_dim={}",
            self.policy.descriptor(),
            self.value.descriptor(),
            self.aux_head as u8,
            self.state_dim,
            self.obs_dim
        )
    }

    pub fn from_descriptor(text: &str) -> Result<Self, NnError> {
        let bad = || NnError::Contract(format!("malformed descriptor `{text}`"));
        let mut policy = None;
        let mut value = None;
        let mut aux = None;
        let mut state_dim = None;
        let mut obs_dim = None;
        for field in text.split(';') {
            let (k, v) = field.split_once('=').ok_or_else(bad)?;
            match k {
                "policy" => policy = Some(MlpSpec::from_descriptor(v)?),
                "value" => value = Some(MlpSpec::from_descriptor(v)?),
                "aux" => aux = Some(v == "1"),
                "state_dim" => state_dim = Some(v.parse().map_err(|_| bad())?),
                "obs_dim" => obs_dim = Some(v.parse().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
        let net = Self {
            policy: policy.ok_or_else(bad)?,
            value: value.ok_or_else(bad)?,
            aux_head: aux.ok_or_else(bad)?,
            state_dim: state_dim.ok_or_else(bad)?,
            obs_dim: obs_dim.ok_or_else(bad)?,
        };
        if net.policy.input_dim() != net.input_dim() || net.value.input_dim() != net.input_dim() {
            return Err(bad());
        }
        Ok(net)
    }
}

/// Stacks equal-width rows into a matrix.
pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Array2<f64> {
    let width = rows.first().map_or(0, |r| r.len());
    Array2::from_shape_fn((rows.len(), width), |(i, j)| rows[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn input_convention() {
        let s = [0.5, -1.0];
        let o = [1.0, 0.0, 0.0];
        let g = guider_input(&s, &o);
        let l = learner_input(2, &o);
        assert_eq!(g, vec![0.5, -1.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(l, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(g.len(), l.len());
    }

    #[test]
    fn zero_policy_gives_uniform_and_zero_value() {
        let net = PolicyNet::new(2, 3, Head::Categorical { n_actions: 3 }, &NetShape::default(), false).unwrap();
        let params = ParamVector(vec![0.0; net.n_params()]);
        let x = rows_to_matrix(&[guider_input(&[1.0, 0.0], &[1.0, 0.0, 0.0])]);
        let d = net.policy_dists(&params, x.view()).unwrap();
        assert_eq!(d[0], ActionDist::uniform(3));
        assert_eq!(net.values(&params, x.view()).unwrap(), vec![0.0]);
    }

    #[test]
    fn init_length_matches_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for aux in [false, true] {
            let net = PolicyNet::new(6, 4, Head::DiagGaussian { action_dim: 2 }, &NetShape::default(), aux).unwrap();
            let p = net.init(&mut rng);
            assert_eq!(p.len(), net.n_params());
            assert!(p.is_finite());
        }
    }

    #[test]
    fn aux_head_plain_and_tape_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = NetShape {
            hidden: vec![8, 5],
            value_hidden: vec![4],
            activation: Activation::Tanh,
        };
        let net = PolicyNet::new(2, 3, Head::Categorical { n_actions: 3 }, &shape, true).unwrap();
        let mut p = net.init(&mut rng);
        p.0.iter_mut().for_each(|x| *x += rng.random_range(-0.3..0.3));
        let x = rows_to_matrix(&[guider_input(&[1.0, 0.0], &[0.0, 1.0, 0.0]), learner_input(2, &[0.0, 1.0, 0.0])]);
        let plain = net.aux_dists(&p, x.view()).unwrap();
        let mut tape = Tape::new();
        let pv = tape.param(Array2::from_shape_vec((1, p.len()), p.0.clone()).unwrap());
        let xv = tape.constant(x);
        let (_, aux) = net.policy_and_aux_tape(&mut tape, pv, xv).unwrap();
        let TapeDist::Categorical { probs, .. } = aux else { unreachable!() };
        for (i, d) in plain.iter().enumerate() {
            let ActionDist::Categorical { probs: pp } = d else { unreachable!() };
            for (j, q) in pp.iter().enumerate() {
                assert_eq!(tape.value(probs)[[i, j]], *q);
            }
        }
    }

    #[test]
    fn descriptor_round_trips() {
        let net = PolicyNet::new(4, 2, Head::Categorical { n_actions: 4 }, &NetShape::default(), true).unwrap();
        assert_eq!(PolicyNet::from_descriptor(&net.descriptor()).unwrap(), net);
    }
}
