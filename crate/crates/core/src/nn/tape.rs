//! Reverse-mode differentiation over dense row-major matrices.
//!
//! Every value on the tape is an `Array2<f64>`; scalars are `1 x 1` and
//! per-sample quantities are `B x 1`. Elementwise binary ops broadcast
//! along any axis of length one, and their adjoints are summed back to the
//! operand shape.
//!
//! The supported primitive set is deliberately small: affine maps,
//! nonlinearities, softmax, log, exp, square, clip (zero gradient outside
//! the interval), elementwise min, reductions, gathers and stop-gradient.

use ndarray::{s, Array2, Axis, Zip};

use super::NnError;

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Block { src: Var, offset: usize },
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Silu(Var),
    Clip(Var, f64, f64),
    Min(Var, Var),
    Softmax(Var),
    SumRows(Var),
    SumAll(Var),
    MeanAll(Var),
    Gather(Var, Vec<usize>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Block { .. } => "block",
            Op::MatMul(..) => "matmul",
            Op::Affine(..) => "affine",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Tanh(..) => "tanh",
            Op::Silu(..) => "silu",
            Op::Clip(..) => "clip",
            Op::Min(..) => "min",
            Op::Softmax(..) => "softmax",
            Op::SumRows(..) => "sum_rows",
            Op::SumAll(..) => "sum_all",
            Op::MeanAll(..) => "mean_all",
            Op::Gather(..) => "gather",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
        }
    }
}

struct Node {
    op: Op,
    value: Mat,
    requires_grad: bool,
}

/// A single-use computation record.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    non_finite: Option<&'static str>,
    branch_hash: u64,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients(Vec<Option<Mat>>);

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }
}

const FNV_PRIME: u64 = 0x100_0000_01b3;

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            non_finite: None,
            branch_hash: 0xcbf2_9ce4_8422_2325,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Digest of every branch decision (clip, min) taken so far. Two
    /// evaluations with equal digests lie on the same smooth piece.
    pub fn branch_hash(&self) -> u64 {
        self.branch_hash
    }

    /// First primitive that produced a non-finite value, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        self.non_finite
    }

    fn push(&mut self, op: Op, value: Mat, requires_grad: bool) -> Var {
        // Wide hidden activations are produced by matmul/affine/activation
        // ops that preserve finiteness short of overflow, which the narrow
        // downstream nodes still catch.
        let scan = value.ncols() <= 8 || matches!(op, Op::Leaf | Op::Exp(..) | Op::Log(..) | Op::Div(..));
        if scan && self.non_finite.is_none() && !value.iter().all(|x| x.is_finite()) {
            self.non_finite = Some(op.name());
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record_branch(&mut self, bit: bool) {
        self.branch_hash ^= bit as u64 + 1;
        self.branch_hash = self.branch_hash.wrapping_mul(FNV_PRIME);
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn scalar_constant(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Mat) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Detached copy: same value, no gradient flows back through it.
    pub fn stop_gradient(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.push(Op::Leaf, value, false)
    }

    /// `rows x cols` view into a `1 x N` row vector starting at `offset`.
    pub fn block(&mut self, src: Var, offset: usize, rows: usize, cols: usize) -> Var {
        let flat = self.value(src);
        assert_eq!(flat.nrows(), 1, "block source must be a row vector");
        assert!(offset + rows * cols <= flat.ncols(), "block out of range");
        let data = flat.slice(s![0, offset..offset + rows * cols]).to_vec();
        let value = Array2::from_shape_vec((rows, cols), data).expect("block shape");
        let rg = self.rg(src);
        self.push(Op::Block { src, offset }, value, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMul(a, b), value, rg)
    }

    /// `x w + b` with `b` a `1 x n` row broadcast over the rows of `x w`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let mut value = self.value(x).dot(self.value(w));
        value += self.value(b);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(Op::Affine(x, w, b), value, rg)
    }

    fn broadcast(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(va.dim(), vb.dim());
        let mut out = Array2::zeros(shape);
        let ea = va.broadcast(shape).expect("broadcast lhs");
        let eb = vb.broadcast(shape).expect("broadcast rhs");
        Zip::from(&mut out)
            .and(&ea)
            .and(&eb)
            .for_each(|o, &x, &y| *o = f(x, y));
        let rg = self.rg(a) || self.rg(b);
        self.push(op, out, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.broadcast(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.broadcast(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.broadcast(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.broadcast(Op::Div(a, b), a, b, |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|x| x * c);
        let rg = self.rg(a);
        self.push(Op::Scale(a, c), value, rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|x| x + c);
        let rg = self.rg(a);
        self.push(Op::Offset(a), value, rg)
    }

    fn unary(&mut self, op: Op, a: Var, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).mapv(f);
        let rg = self.rg(a);
        self.push(op, value, rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Op::Exp(a), a, f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(Op::Log(a), a, f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Op::Square(a), a, |x| x * x)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(Op::LeakyRelu(a, slope), a, |x| leaky_relu(x, slope))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Op::Tanh(a), a, f64::tanh)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(Op::Silu(a), a, silu)
    }

    /// Clamp into `[lo, hi]`; the adjoint is zero wherever the clamp is active.
    pub fn clip(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).mapv(|x| x.clamp(lo, hi));
        let decisions: Vec<bool> = self.value(a).iter().map(|&x| x < lo || x > hi).collect();
        for d in decisions {
            self.record_branch(d);
        }
        let rg = self.rg(a);
        self.push(Op::Clip(a, lo, hi), value, rg)
    }

    /// Elementwise minimum; ties route the adjoint to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let decisions: Vec<bool> = {
            let (va, vb) = (self.value(a), self.value(b));
            assert_eq!(va.dim(), vb.dim(), "min operands must share a shape");
            va.iter().zip(vb.iter()).map(|(x, y)| x <= y).collect()
        };
        for d in decisions {
            self.record_branch(d);
        }
        self.broadcast(Op::Min(a, b), a, b, f64::min)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(Op::Softmax(a), value, rg)
    }

    /// `B x C -> B x 1`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(a);
        self.push(Op::SumRows(a), value, rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(Op::SumAll(a), value, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        let rg = self.rg(a);
        self.push(Op::MeanAll(a), value, rg)
    }

    /// Picks column `idx[i]` of row `i`: `B x C -> B x 1`.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a);
        assert_eq!(v.nrows(), idx.len(), "gather index count");
        let value = Array2::from_shape_fn((idx.len(), 1), |(i, _)| v[[i, idx[i]]]);
        let rg = self.rg(a);
        self.push(Op::Gather(a, idx.to_vec()), value, rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(a);
        self.push(Op::SliceCols(a, start), value, rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let rg = self.rg(a);
        self.push(Op::SliceRows(a, start), value, rg)
    }

    /// Adjoints of the `1 x 1` node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        if let Some(op) = self.non_finite {
            return Err(NnError::NonFinite { op });
        }
        if self.value(loss).dim() != (1, 1) {
            return Err(NnError::Contract("backward requires a scalar loss".into()));
        }
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Block { src, offset } => {
                    let cols = self.value(*src).ncols();
                    let flat = g.as_standard_layout().into_owned().into_shape_with_order((1, out.len())).expect("block adjoint");
                    let mut full = Array2::zeros((1, cols));
                    full.slice_mut(s![.., *offset..*offset + out.len()]).assign(&flat);
                    accumulate(&mut grads, *src, full);
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.dot(&self.value(*b).t()));
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, self.value(*a).t().dot(&g));
                    }
                }
                Op::Affine(x, w, b) => {
                    if self.rg(*x) {
                        accumulate(&mut grads, *x, g.dot(&self.value(*w).t()));
                    }
                    if self.rg(*w) {
                        accumulate(&mut grads, *w, self.value(*x).t().dot(&g));
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                }
                Op::Add(a, b) => {
                    self.acc_reduced(&mut grads, *a, g.clone());
                    self.acc_reduced(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    self.acc_reduced(&mut grads, *b, g.mapv(|x| -x));
                    self.acc_reduced(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        self.acc_reduced(&mut grads, *a, &g * vb);
                    }
                    if self.rg(*b) {
                        self.acc_reduced(&mut grads, *b, &g * va);
                    }
                }
                Op::Div(a, b) => {
                    let vb = self.value(*b);
                    if self.rg(*a) {
                        self.acc_reduced(&mut grads, *a, &g / vb);
                    }
                    if self.rg(*b) {
                        // d(a/b)/db = -(a/b)/b
                        let gb = -(&g * out) / vb;
                        self.acc_reduced(&mut grads, *b, gb);
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.mapv(|x| x * c)),
                Op::Offset(a) => accumulate(&mut grads, *a, g),
                Op::Exp(a) => accumulate(&mut grads, *a, g * out),
                Op::Log(a) => accumulate(&mut grads, *a, g / self.value(*a)),
                Op::Square(a) => accumulate(&mut grads, *a, g * self.value(*a) * 2.0),
                Op::LeakyRelu(a, slope) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|d, &x| {
                        if x < 0.0 {
                            *d *= slope;
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(out).for_each(|d, &y| *d *= 1.0 - y * y);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Silu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|d, &x| {
                        let sig = 1.0 / (1.0 + (-x).exp());
                        *d *= sig * (1.0 + x * (1.0 - sig));
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Clip(a, lo, hi) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|d, &x| {
                        if x < *lo || x > *hi {
                            *d = 0.0;
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Min(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut ga = g.clone();
                    let mut gb = g;
                    Zip::from(&mut ga)
                        .and(&mut gb)
                        .and(va)
                        .and(vb)
                        .for_each(|da, db, &x, &y| {
                            if x <= y {
                                *db = 0.0;
                            } else {
                                *da = 0.0;
                            }
                        });
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Softmax(a) => {
                    // dz = p * (g - <g, p>)
                    let dot = (&g * out).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = out * &(&g - &dot);
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumRows(a) => {
                    let shape = self.value(*a).dim();
                    let ga = g.broadcast(shape).expect("sum_rows adjoint").to_owned();
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let shape = self.value(*a).dim();
                    accumulate(&mut grads, *a, Array2::from_elem(shape, g[[0, 0]]));
                }
                Op::MeanAll(a) => {
                    let v = self.value(*a);
                    let c = g[[0, 0]] / v.len() as f64;
                    accumulate(&mut grads, *a, Array2::from_elem(v.dim(), c));
                }
                Op::Gather(a, idx) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    for (r, &c) in idx.iter().enumerate() {
                        ga[[r, c]] = g[[r, 0]];
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        Ok(Gradients(grads))
    }

    fn acc_reduced(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if !self.rg(v) {
            return;
        }
        let shape = self.value(v).dim();
        accumulate(grads, v, reduce_to(g, shape));
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("incompatible shapes {a:?} and {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

fn reduce_to(g: Mat, shape: (usize, usize)) -> Mat {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

pub(crate) fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x < 0.0 {
        slope * x
    } else {
        x
    }
}

pub(crate) fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub(crate) fn softmax_rows(z: &Mat) -> Mat {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let total = row.sum();
        row.mapv_inplace(|x| x / total);
    }
    out
}

/// Gradient of `loss_fn` at `params`, which are presented to the closure as
/// a single `1 x N` differentiable leaf. Returns `(loss, gradient)`.
pub fn grad<F>(params: &[f64], loss_fn: F) -> Result<(f64, Vec<f64>), NnError>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var, NnError>,
{
    let mut tape = Tape::new();
    let leaf = tape.param(Array2::from_shape_vec((1, params.len()), params.to_vec()).unwrap());
    let loss = loss_fn(&mut tape, leaf)?;
    let grads = tape.backward(loss)?;
    let g = grads
        .wrt(leaf)
        .map(|m| m.iter().copied().collect())
        .unwrap_or_else(|| vec![0.0; params.len()]);
    Ok((tape.scalar(loss), g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn row(v: &[f64]) -> Mat {
        Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn sum_of_squares_has_gradient_2p() {
        let p = [0.3, -1.2, 2.5, 0.0];
        let (l, g) = grad(&p, |t, x| {
            let sq = t.square(x);
            Ok(t.sum(sq))
        })
        .unwrap();
        assert!((l - p.iter().map(|x| x * x).sum::<f64>()).abs() < 1e-15);
        for (gi, pi) in g.iter().zip(p) {
            assert_eq!(*gi, 2.0 * pi);
        }
    }

    #[test]
    fn stop_gradient_treats_factor_as_constant() {
        // loss = sg(sum p^2) * sum p  =>  grad = (sum p^2) * 1
        let p = [1.0, 2.0, -0.5];
        let f: f64 = p.iter().map(|x| x * x).sum();
        let (_, g) = grad(&p, |t, x| {
            let sq = t.square(x);
            let fsum = t.sum(sq);
            let frozen = t.stop_gradient(fsum);
            let gsum = t.sum(x);
            Ok(t.mul(frozen, gsum))
        })
        .unwrap();
        for gi in g {
            assert!((gi - f).abs() < 1e-14);
        }
    }

    #[test]
    fn clip_has_zero_gradient_outside() {
        let p = [-2.0, 0.5, 3.0];
        let (_, g) = grad(&p, |t, x| {
            let c = t.clip(x, -1.0, 1.0);
            Ok(t.sum(c))
        })
        .unwrap();
        assert_eq!(g, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn broadcast_adjoints_reduce_to_operand_shape() {
        let mut t = Tape::new();
        let a = t.param(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let b = t.param(row(&[10.0, 20.0]));
        let c = t.param(array![[1.0], [2.0], [3.0]]);
        let ab = t.add(a, b);
        let abc = t.mul(ab, c);
        let l = t.sum(abc);
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(b).unwrap(), &array![[6.0, 6.0]]);
        assert_eq!(g.wrt(c).unwrap(), &array![[33.0], [37.0], [41.0]]);
        assert_eq!(g.wrt(a).unwrap(), &array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]);
    }

    #[test]
    fn non_finite_is_reported_with_primitive() {
        let p = [0.0, 1.0];
        let err = grad(&p, |t, x| {
            let l = t.log(x);
            Ok(t.sum(l))
        })
        .unwrap_err();
        assert!(matches!(err, NnError::NonFinite { op: "log" }));
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let p = [0.2, -0.7, 1.1, 0.4, 0.0, -0.3];
        let weights = array![[0.3, -1.0, 2.0], [1.5, 0.2, -0.4]];
        let f = |q: &[f64]| -> Result<(f64, Vec<f64>), NnError> {
            grad(q, |t, x| {
                let z = t.block(x, 0, 2, 3);
                let sm = t.softmax(z);
                let w = t.constant(weights.clone());
                let prod = t.mul(sm, w);
                let lg = t.log(sm);
                let prod2 = t.mul(prod, lg);
                Ok(t.sum(prod2))
            })
        };
        let (_, g) = f(&p).unwrap();
        let h = 1e-6;
        for i in 0..p.len() {
            let mut up = p.to_vec();
            let mut dn = p.to_vec();
            up[i] += h;
            dn[i] -= h;
            let fd = (f(&up).unwrap().0 - f(&dn).unwrap().0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "coord {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn affine_matches_matmul_plus_bias() {
        let p: Vec<f64> = (0..14).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let xs = array![[0.5, -1.0], [2.0, 0.25], [-0.3, 0.8]];
        let run = |fused: bool| {
            grad(&p, |t, v| {
                let x = t.block(v, 0, 3, 2);
                let w = t.block(v, 6, 2, 3);
                let b = t.block(v, 12, 1, 2);
                let b = t.slice_cols(b, 0, 2);
                let w = t.slice_cols(w, 0, 2);
                let c = t.constant(xs.clone());
                let x = t.mul(x, c);
                let z = if fused {
                    t.affine(x, w, b)
                } else {
                    let m = t.matmul(x, w);
                    t.add(m, b)
                };
                let sq = t.square(z);
                Ok(t.sum(sq))
            })
            .unwrap()
        };
        let (lf, gf) = run(true);
        let (lu, gu) = run(false);
        assert!((lf - lu).abs() < 1e-14);
        for (a, b) in gf.iter().zip(&gu) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
