//! Reverse-mode differentiation over dense 64-bit matrices.
//!
//! A [`Tape`] records every intermediate as an owned `Array2<f64>` together
//! with the operation that produced it. Scalars are `1×1` matrices. Nodes
//! created with [`Tape::constant`] (and everything computed only from
//! constants) carry no gradient, which is how callers freeze parameters.

use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    LogSigmoid(Var),
    LogSoftmaxRows(Var),
    /// Row softmax of the input, kept for the backward pass.
    InfoNce(Var, Array2<f64>),
    Club(Var),
    Clamp(Var, f64, f64),
    Diag(Var),
    OffDiagMean(Var),
    Mean(Var),
    Sum(Var),
    RowSum(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize, usize),
    Detach,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddBias(..) => "add_bias",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Softplus(..) => "softplus",
            Op::LogSigmoid(..) => "log_sigmoid",
            Op::LogSoftmaxRows(..) => "log_softmax_rows",
            Op::InfoNce(..) => "infonce",
            Op::Club(..) => "club",
            Op::Clamp(..) => "clamp",
            Op::Diag(..) => "diag",
            Op::OffDiagMean(..) => "off_diag_mean",
            Op::Mean(..) => "mean",
            Op::Sum(..) => "sum",
            Op::RowSum(..) => "row_sum",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::Detach => "detach",
        }
    }
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation graph.
pub struct Tape {
    nodes: Vec<Node>,
    first_non_finite: Option<(usize, &'static str)>,
    relu_margin: f64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Below this argument `exp` is flushed to zero. `e^-60 ≈ 1e-26` is far under
/// the resolution of an O(1) softmax sum, and the flush keeps products of
/// tiny weights (and their squares in Adam) out of subnormal range.
const EXP_FLUSH: f64 = -60.0;

/// `exp(x)`, returning exactly zero instead of a subnormal or tiny result.
pub(crate) fn exp_flushed(x: f64) -> f64 {
    if x < EXP_FLUSH {
        0.0
    } else {
        x.exp()
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + exp_flushed(-x.abs()).ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp_flushed(-x))
    } else {
        let e = exp_flushed(x);
        e / (1.0 + e)
    }
}

fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| exp_flushed(v - max)).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// `x · 0` is NaN exactly for infinite or NaN `x`; summing lane-wise keeps
/// the scan vectorisable.
fn all_finite(x: &Array2<f64>) -> bool {
    match x.as_slice_memory_order() {
        Some(s) => {
            let mut acc = [0.0f64; 8];
            let chunks = s.chunks_exact(8);
            let tail = chunks.remainder();
            for c in chunks {
                for (a, v) in acc.iter_mut().zip(c) {
                    *a += v * 0.0;
                }
            }
            let rest: f64 = tail.iter().map(|v| v * 0.0).sum();
            (acc.iter().sum::<f64>() + rest) == 0.0
        }
        None => x.iter().all(|v| v.is_finite()),
    }
}

fn scalar(v: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), v)
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            first_non_finite: None,
            relu_margin: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => true,
            Op::Constant | Op::Detach => false,
            Op::MatMul(a, b)
            | Op::MatMulT(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::AddBias(a, b)
            | Op::Mul(a, b)
            | Op::ConcatCols(a, b) => self.rg(*a) || self.rg(*b),
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Softplus(a)
            | Op::LogSigmoid(a)
            | Op::LogSoftmaxRows(a)
            | Op::InfoNce(a, _)
            | Op::Club(a)
            | Op::Clamp(a, ..)
            | Op::Diag(a)
            | Op::OffDiagMean(a)
            | Op::Mean(a)
            | Op::Sum(a)
            | Op::RowSum(a)
            | Op::SliceCols(a, ..) => self.rg(*a),
        };
        let id = self.nodes.len();
        if self.first_non_finite.is_none() && !all_finite(&value) {
            self.first_non_finite = Some((id, op.name()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(id)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    /// Smallest |pre-activation| seen by any relu on this tape.
    pub fn relu_margin(&self) -> f64 {
        self.relu_margin
    }

    /// Fails with the first node whose value was non-finite.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite {
            Some((node, op)) => Err(Error::Numeric { node, op }),
            None => Ok(()),
        }
    }

    /// `a · b`
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let v = self.value(a) + self.value(bias);
        self.push(v, Op::AddBias(a, bias))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let margin = x.iter().fold(f64::INFINITY, |m, &v| m.min(v.abs()));
        let v = x.mapv(|v| v.max(0.0));
        self.relu_margin = self.relu_margin.min(margin);
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln);
        self.push(v, Op::Log(a))
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(softplus);
        self.push(v, Op::Softplus(a))
    }

    /// `ln σ(x)`
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| -softplus(-x));
        self.push(v, Op::LogSigmoid(a))
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let v = log_softmax_rows(self.value(a));
        self.push(v, Op::LogSoftmaxRows(a))
    }

    /// `mean_i log softmax(S[i])[i]` of a square matrix in one node.
    pub fn infonce_diag(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.nrows();
        assert!(n >= 1 && n == x.ncols(), "infonce_diag needs a square matrix");
        let mut probs = x.clone();
        let mut total = 0.0;
        for (i, mut row) in probs.rows_mut().into_iter().enumerate() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut z = 0.0;
            row.mapv_inplace(|v| {
                let e = exp_flushed(v - max);
                z += e;
                e
            });
            row.mapv_inplace(|e| e / z);
            total += x[[i, i]] - max - z.ln();
        }
        let v = scalar(total / n as f64);
        self.push(v, Op::InfoNce(a, probs))
    }

    /// Diagonal mean minus off-diagonal mean of a square matrix.
    pub fn club_gap(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.nrows();
        assert!(n >= 2 && n == x.ncols(), "club_gap needs square n >= 2");
        let trace: f64 = (0..n).map(|i| x[[i, i]]).sum();
        let off = (x.sum() - trace) / (n * (n - 1)) as f64;
        self.push(scalar(trace / n as f64 - off), Op::Club(a))
    }

    /// Gradient passes only where `lo < x < hi`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Diagonal of a square matrix as an `n×1` column.
    pub fn diag(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.nrows();
        assert_eq!(n, x.ncols(), "diag of non-square matrix");
        let v = Array2::from_shape_fn((n, 1), |(i, _)| x[[i, i]]);
        self.push(v, Op::Diag(a))
    }

    /// Mean of the off-diagonal entries of a square matrix.
    pub fn off_diag_mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.nrows();
        assert!(n >= 2 && n == x.ncols(), "off_diag_mean needs square n >= 2");
        let trace: f64 = (0..n).map(|i| x[[i, i]]).sum();
        let v = (x.sum() - trace) / (n * (n - 1)) as f64;
        self.push(scalar(v), Op::OffDiagMean(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a).mean().expect("mean of empty matrix");
        self.push(scalar(v), Op::Mean(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum();
        self.push(scalar(v), Op::Sum(a))
    }

    /// Sum across columns, giving an `m×1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::RowSum(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let v = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat_cols row mismatch");
        self.push(v, Op::ConcatCols(a, b))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self
            .value(a)
            .slice(ndarray::s![.., start..end])
            .to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    /// Same value, no gradient flows back.
    pub fn detach(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.push(v, Op::Detach)
    }

    /// Backpropagates from a scalar node. Fails if any recorded value was
    /// non-finite.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check_finite()?;
        assert_eq!(self.value(loss).dim(), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(scalar(1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Constant | Op::Detach => {}
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.rg(*a) {
                        let ga = g.dot(self.value(*b));
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = g.t().dot(self.value(*a));
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, -&g);
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::AddBias(a, bias) => {
                    if self.rg(*bias) {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, *bias, gb);
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, &g * self.value(*b));
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, &g * self.value(*a));
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g * *c),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|gi, &x| {
                            if x <= 0.0 {
                                *gi = 0.0
                            }
                        });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(out).for_each(|gi, &y| *gi *= 1.0 - y * y);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => accumulate(&mut grads, *a, g * out),
                Op::Log(a) => accumulate(&mut grads, *a, g / self.value(*a)),
                Op::Softplus(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|gi, &x| *gi *= sigmoid(x));
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|gi, &x| *gi *= sigmoid(-x));
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    // dx = g - softmax * rowsum(g)
                    let row_sums = g.sum_axis(Axis(1));
                    let mut ga = g;
                    for ((mut grow, orow), s) in
                        ga.rows_mut().into_iter().zip(out.rows()).zip(row_sums.iter())
                    {
                        Zip::from(&mut grow)
                            .and(&orow)
                            .for_each(|gi, &lp| *gi -= exp_flushed(lp) * s);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::InfoNce(a, probs) => {
                    // d/dS_ij = (δ_ij − p_ij) / n
                    let n = probs.nrows();
                    let c = g[[0, 0]] / n as f64;
                    let mut ga = probs * -c;
                    for i in 0..n {
                        ga[[i, i]] += c;
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Club(a) => {
                    let n = self.value(*a).nrows();
                    let off = -g[[0, 0]] / (n * (n - 1)) as f64;
                    let mut ga = Array2::from_elem((n, n), off);
                    for i in 0..n {
                        ga[[i, i]] = g[[0, 0]] / n as f64;
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|gi, &x| {
                        if x <= *lo || x >= *hi {
                            *gi = 0.0
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Diag(a) => {
                    let n = g.nrows();
                    let mut ga = Array2::zeros((n, n));
                    for i in 0..n {
                        ga[[i, i]] = g[[i, 0]];
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::OffDiagMean(a) => {
                    let n = self.value(*a).nrows();
                    let c = g[[0, 0]] / (n * (n - 1)) as f64;
                    let mut ga = Array2::from_elem((n, n), c);
                    for i in 0..n {
                        ga[[i, i]] = 0.0;
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Mean(a) => {
                    let dim = self.value(*a).dim();
                    let c = g[[0, 0]] / (dim.0 * dim.1) as f64;
                    accumulate(&mut grads, *a, Array2::from_elem(dim, c));
                }
                Op::Sum(a) => {
                    let dim = self.value(*a).dim();
                    accumulate(&mut grads, *a, Array2::from_elem(dim, g[[0, 0]]));
                }
                Op::RowSum(a) => {
                    let dim = self.value(*a).dim();
                    let ga = Array2::from_shape_fn(dim, |(i, _)| g[[i, 0]]);
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(a, b) => {
                    let split = self.value(*a).ncols();
                    if self.rg(*a) {
                        let ga = g.slice(ndarray::s![.., ..split]).to_owned();
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let gb = g.slice(ndarray::s![.., split..]).to_owned();
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let dim = self.value(*a).dim();
                    let mut ga = Array2::zeros(dim);
                    ga.slice_mut(ndarray::s![.., *start..*end]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
            }
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| match n.op {
                Op::Leaf => g.or_else(|| Some(Array2::zeros(n.value.dim()))),
                _ => None,
            })
            .collect::<Vec<_>>();
        if let Some((i, g)) = grads
            .iter()
            .enumerate()
            .find(|(_, g)| g.as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite())))
        {
            let _ = g;
            return Err(Error::Numeric {
                node: i,
                op: "gradient",
            });
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of a scalar with respect to every leaf of a tape.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient for a leaf; `None` for non-leaf nodes.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub(crate) fn take(&mut self, v: Var) -> Array2<f64> {
        self.grads[v.0].take().expect("gradient requested for a non-leaf node")
    }
}
