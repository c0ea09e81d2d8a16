use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tape::{leaky_relu, silu, Tape, Var};
use super::NnError;

/// Negative slope used by [`Activation::LeakyRelu`].
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Tanh,
    Silu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu => leaky_relu(x, LEAKY_SLOPE),
            Activation::Tanh => x.tanh(),
            Activation::Silu => silu(x),
        }
    }

    fn on_tape(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::LeakyRelu => tape.leaky_relu(x, LEAKY_SLOPE),
            Activation::Tanh => tape.tanh(x),
            Activation::Silu => tape.silu(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::LeakyRelu => "leaky_relu",
            Activation::Tanh => "tanh",
            Activation::Silu => "silu",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Categorical { n_actions: usize },
    DiagGaussian { action_dim: usize },
    Value,
}

impl Head {
    pub fn width(self) -> usize {
        match self {
            Head::Categorical { n_actions } => n_actions,
            Head::DiagGaussian { action_dim } => 2 * action_dim,
            Head::Value => 1,
        }
    }
}

/// Dense network shape. Parameters are laid out layer by layer: the
/// `in x out` weight matrix in row-major order, then the `out` biases.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
    activation: Activation,
    head: Head,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, head: Head) -> Result<Self, NnError> {
        if layer_sizes.len() < 2 {
            return Err(NnError::Contract("an MLP needs at least an input and an output layer".into()));
        }
        if layer_sizes.iter().any(|&n| n == 0) {
            return Err(NnError::Contract("layer sizes must be positive".into()));
        }
        let out = *layer_sizes.last().unwrap();
        if out != head.width() {
            return Err(NnError::Contract(format!(
                "final layer width {out} does not match head width {}",
                head.width()
            )));
        }
        if let Head::Categorical { n_actions } = head {
            if n_actions < 2 {
                return Err(NnError::Contract("categorical head needs at least 2 actions".into()));
            }
        }
        Ok(Self {
            layer_sizes,
            activation,
            head,
        })
    }

    /// Input width, hidden widths, head.
    pub fn with_hidden(input: usize, hidden: &[usize], activation: Activation, head: Head) -> Result<Self, NnError> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(head.width());
        Self::new(sizes, activation, head)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Width of the last hidden layer (the input width when there is none).
    pub fn trunk_width(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 2]
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.layer_sizes.windows(2).map(move |w| {
            let here = offset;
            offset += w[0] * w[1] + w[1];
            (here, w[0], w[1])
        })
    }

    fn check_input(&self, width: usize) -> Result<(), NnError> {
        if width != self.input_dim() {
            return Err(NnError::Contract(format!(
                "input width {width} does not match network input {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Raw head outputs for a batch of inputs (`B x input_dim`).
    pub fn forward(&self, params: &[f64], inputs: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        Ok(self.forward_with_trunk(params, inputs)?.0)
    }

    /// Raw outputs together with the last hidden activations.
    pub fn forward_with_trunk(
        &self,
        params: &[f64],
        inputs: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>), NnError> {
        self.check_input(inputs.ncols())?;
        if params.len() < self.n_params() {
            return Err(NnError::Contract("parameter vector too short".into()));
        }
        let n_layers = self.layer_sizes.len() - 1;
        let mut h = inputs.to_owned();
        let mut trunk = Array2::zeros((0, 0));
        for (i, (offset, fan_in, fan_out)) in self.layers().enumerate() {
            let w_end = offset + fan_in * fan_out;
            let w = ArrayView2::from_shape((fan_in, fan_out), &params[offset..w_end]).unwrap();
            let b = ArrayView2::from_shape((1, fan_out), &params[w_end..w_end + fan_out]).unwrap();
            let mut z = &h.dot(&w) + &b;
            if i + 1 < n_layers {
                z.mapv_inplace(|x| self.activation.apply(x));
                h = z;
            } else {
                trunk = std::mem::replace(&mut h, z);
            }
        }
        Ok((h, trunk))
    }

    /// Same computation recorded on a tape. `params` is a `1 x N` row and
    /// this network's block starts at `base`.
    pub fn forward_tape(&self, tape: &mut Tape, params: Var, base: usize, inputs: Var) -> Result<Var, NnError> {
        Ok(self.forward_tape_with_trunk(tape, params, base, inputs)?.0)
    }

    pub fn forward_tape_with_trunk(
        &self,
        tape: &mut Tape,
        params: Var,
        base: usize,
        inputs: Var,
    ) -> Result<(Var, Var), NnError> {
        self.check_input(tape.value(inputs).ncols())?;
        let n_layers = self.layer_sizes.len() - 1;
        let mut h = inputs;
        let mut trunk = inputs;
        for (i, (offset, fan_in, fan_out)) in self.layers().enumerate() {
            let w = tape.block(params, base + offset, fan_in, fan_out);
            let b = tape.block(params, base + offset + fan_in * fan_out, 1, fan_out);
            let mut z = tape.affine(h, w, b);
            if i + 1 < n_layers {
                z = self.activation.on_tape(tape, z);
            } else {
                trunk = h;
            }
            h = z;
        }
        Ok((h, trunk))
    }

    /// Orthogonal initialization: hidden layers use `hidden_gain`, the final
    /// layer `output_gain`; biases start at zero.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, hidden_gain: f64, output_gain: f64) -> Vec<f64> {
        let n_layers = self.layer_sizes.len() - 1;
        let mut out = Vec::with_capacity(self.n_params());
        for (i, (_, fan_in, fan_out)) in self.layers().enumerate() {
            let gain = if i + 1 < n_layers { hidden_gain } else { output_gain };
            out.extend(orthogonal(rng, fan_in, fan_out, gain));
            out.extend(std::iter::repeat_n(0.0, fan_out));
        }
        out
    }

    /// Stable textual description used for hashing and serialization.
    pub fn descriptor(&self) -> String {
        let sizes: Vec<String> = self.layer_sizes.iter().map(|n| n.to_string()).collect();
        let head = match self.head {
            Head::Categorical { n_actions } => format!("categorical({n_actions})"),
            Head::DiagGaussian { action_dim } => format!("diag_gaussian({action_dim})"),
            Head::Value => "value".to_string(),
        };
        format!("{}|{}|{}", sizes.join(","), self.activation.name(), head)
    }

    pub fn from_descriptor(text: &str) -> Result<Self, NnError> {
        let bad = || NnError::Contract(format!("malformed network descriptor `{text}`"));
        let mut parts = text.split('|');
        let sizes = parts.next().ok_or_else(bad)?;
        let act = parts.next().ok_or_else(bad)?;
        let head = parts.next().ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        let sizes: Vec<usize> = sizes
            .split(',')
            .map(|s| s.parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let activation = match act {
            "leaky_relu" => Activation::LeakyRelu,
            "tanh" => Activation::Tanh,
            "silu" => Activation::Silu,
            _ => return Err(bad()),
        };
        let arg = |h: &str, prefix: &str| -> Result<usize, NnError> {
            h.strip_prefix(prefix)
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|n| n.parse().ok())
                .ok_or_else(bad)
        };
        let head = if head == "value" {
            Head::Value
        } else if head.starts_with("categorical(") {
            Head::Categorical {
                n_actions: arg(head, "categorical(")?,
            }
        } else if head.starts_with("diag_gaussian(") {
            Head::DiagGaussian {
                action_dim: arg(head, "diag_gaussian(")?,
            }
        } else {
            return Err(bad());
        };
        Self::new(sizes, activation, head)
    }
}

/// `rows x cols` matrix with orthonormal rows or columns (whichever is
/// fewer), scaled by `gain`. Modified Gram-Schmidt on a Gaussian draw.
pub fn orthogonal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, gain: f64) -> Vec<f64> {
    let (n, m) = if rows >= cols { (cols, rows) } else { (rows, cols) };
    // n vectors of length m
    let mut vecs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    for i in 0..n {
        for j in 0..i {
            let dot: f64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
            let (head, tail) = vecs.split_at_mut(i);
            for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                *x -= dot * y;
            }
        }
        let norm = vecs[i].iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        vecs[i].iter_mut().for_each(|x| *x /= norm);
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let v = if rows >= cols { vecs[c][r] } else { vecs[r][c] };
            out[r * cols + c] = gain * v;
        }
    }
    out
}
