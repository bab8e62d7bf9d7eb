//! Define-by-run computation tape.
//!
//! Every operation is evaluated as soon as it is recorded, so recording a
//! model *is* its forward pass. `backward` replays the tape in reverse
//! insertion order, which is a valid reverse topological order because a node
//! can only reference nodes recorded before it.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{dropout_mask, AutodiffError, CsrMatrix, Tensor};

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    ScaleRows(Var, Arc<Vec<f64>>),
    MaskMul(Var, Arc<Vec<f64>>),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    LogSigmoid(Var),
    Sum(Var),
    Mean(Var),
    GatherRows(Var, Arc<Vec<usize>>),
    ConcatRows(Vec<Var>),
    SoftmaxRows(Var),
    NormalizeRows(Var),
    LayerNormRows { x: Var, scale: Var, shift: Var },
    DotRows(Var, Var),
    L2Norm(Var),
    SpMM(Arc<CsrMatrix>, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddRow(..) => "add_row",
            Op::ScaleRows(..) => "scale_rows",
            Op::MaskMul(..) => "mask_mul",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::LogSigmoid(..) => "log_sigmoid",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::GatherRows(..) => "gather_rows",
            Op::ConcatRows(..) => "concat_rows",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::NormalizeRows(..) => "normalize_rows",
            Op::LayerNormRows { .. } => "layer_norm_rows",
            Op::DotRows(..) => "dot_rows",
            Op::L2Norm(..) => "l2_norm",
            Op::SpMM(..) => "spmm",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    /// Per-op saved intermediates (normalized activations, inverse std-devs).
    saved: Vec<f64>,
}

pub const LAYER_NORM_EPS: f64 = 1e-8;

/// Gradients of a scalar output with respect to every trainable parameter.
#[derive(Clone, Debug, Default)]
pub struct GradientMap {
    grads: BTreeMap<Var, Tensor>,
}

impl GradientMap {
    /// Gradient for `param`; panics if `param` was not registered as trainable.
    pub fn wrt(&self, param: Var) -> &Tensor {
        self.grads
            .get(&param)
            .unwrap_or_else(|| panic!("node {} is not a trainable parameter", param.0))
    }

    pub fn get(&self, param: Var) -> Option<&Tensor> {
        self.grads.get(&param)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = Var> + '_ {
        self.grads.keys().copied()
    }

    pub fn into_tensor(mut self, param: Var) -> Tensor {
        self.grads
            .remove(&param)
            .unwrap_or_else(|| panic!("node {} is not a trainable parameter", param.0))
    }
}

/// A single-owner recording of a computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Trainable parameters in registration order.
    pub fn params(&self) -> &[Var] {
        &self.params
    }

    fn push(&mut self, op: Op, value: Tensor, saved: Vec<f64>) -> Result<Var> {
        let id = self.nodes.len();
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite {
                op: op.name(),
                node: id,
            });
        }
        self.nodes.push(Node { op, value, saved });
        Ok(Var(id))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> AutodiffError {
        AutodiffError::ShapeMismatch {
            op,
            lhs: a.0,
            lhs_shape: self.shape(a).to_vec(),
            rhs: b.0,
            rhs_shape: self.shape(b).to_vec(),
        }
    }

    fn invalid(&self, op: &'static str, v: Var, expected: &'static str) -> AutodiffError {
        AutodiffError::InvalidShape {
            op,
            node: v.0,
            shape: self.shape(v).to_vec(),
            expected,
        }
    }

    fn require_matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(self.invalid(op, v, "a rank-2 tensor"));
        }
        Ok((s[0], s[1]))
    }

    /// Records a constant input.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Leaf, value, Vec::new())
    }

    /// Records a trainable parameter.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        let v = self.push(Op::Param, value, Vec::new())?;
        self.params.push(v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.require_matrix("matmul", a)?;
        let (k2, n) = self.require_matrix("matmul", b)?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let out = matmul_kernel(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(
            Op::MatMul(a, b),
            Tensor::from_parts(vec![m, n], out),
            Vec::new(),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.require_matrix("transpose", a)?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        self.push(
            Op::Transpose(a),
            Tensor::from_parts(vec![n, m], out),
            Vec::new(),
        )
    }

    fn binary_same_shape(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(name, a, b));
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(op, Tensor::from_parts(shape, data), Vec::new())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let shape = t.shape().to_vec();
        self.push(op, Tensor::from_parts(shape, data), Vec::new())
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    /// Adds a length-`n` vector to every row of an `m x n` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.require_matrix("add_row", x)?;
        if self.shape(bias) != [n] {
            return Err(self.mismatch("add_row", x, bias));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for i in 0..m {
            add_into(&mut out[i * n..(i + 1) * n], &b);
        }
        self.push(
            Op::AddRow(x, bias),
            Tensor::from_parts(vec![m, n], out),
            Vec::new(),
        )
    }

    /// Multiplies row `i` of `x` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, x: Var, factors: Arc<Vec<f64>>) -> Result<Var> {
        let (m, n) = self.require_matrix("scale_rows", x)?;
        if factors.len() != m {
            return Err(self.invalid("scale_rows", x, "one factor per row"));
        }
        let mut out = self.value(x).data().to_vec();
        for (i, f) in factors.iter().enumerate() {
            for v in &mut out[i * n..(i + 1) * n] {
                *v *= f;
            }
        }
        self.push(
            Op::ScaleRows(x, factors),
            Tensor::from_parts(vec![m, n], out),
            Vec::new(),
        )
    }

    /// Elementwise product with a constant mask of the same size.
    pub fn mask_mul(&mut self, x: Var, mask: Arc<Vec<f64>>) -> Result<Var> {
        if mask.len() != self.value(x).numel() {
            return Err(self.invalid("mask_mul", x, "a mask with the same element count"));
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(a, m)| a * m)
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(
            Op::MaskMul(x, mask),
            Tensor::from_parts(shape, data),
            Vec::new(),
        )
    }

    /// Applies an inverted-scaling dropout mask drawn from `seed`.
    pub fn dropout(&mut self, x: Var, rate: f64, seed: u64) -> Result<Var> {
        if rate == 0.0 {
            return Ok(x);
        }
        let mask = dropout_mask(self.shape(x), rate, seed)?;
        self.mask_mul(x, Arc::new(mask.into_data()))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, stable_sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::ln, Op::Log(a))
    }

    /// `ln(sigmoid(x))`, evaluated without underflow for large negative `x`.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, stable_log_sigmoid, Op::LogSigmoid(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s), Vec::new())
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(self.invalid("mean", a, "a non-empty tensor"));
        }
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Op::Mean(a), Tensor::scalar(s), Vec::new())
    }

    /// Row lookup: `out[j] = table[indices[j]]`.
    pub fn gather_rows(&mut self, table: Var, indices: Arc<Vec<usize>>) -> Result<Var> {
        let (rows, d) = self.require_matrix("gather_rows", table)?;
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices.iter() {
            if i >= rows {
                return Err(AutodiffError::IndexOutOfBounds {
                    op: "gather_rows",
                    index: i,
                    rows,
                });
            }
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let n = indices.len();
        self.push(
            Op::GatherRows(table, indices),
            Tensor::from_parts(vec![n, d], out),
            Vec::new(),
        )
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or(AutodiffError::EmptyInput { op: "concat_rows" })?;
        let (_, d) = self.require_matrix("concat_rows", first)?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.require_matrix("concat_rows", p)?;
            if c != d {
                return Err(self.mismatch("concat_rows", first, p));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        self.push(
            Op::ConcatRows(parts.to_vec()),
            Tensor::from_parts(vec![rows, d], out),
            Vec::new(),
        )
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.require_matrix("softmax_rows", a)?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n).take(m) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        self.push(
            Op::SoftmaxRows(a),
            Tensor::from_parts(vec![m, n], out),
            Vec::new(),
        )
    }

    /// Row-wise `x / sum(x)` with no exponent. A zero row sum yields a
    /// non-finite error.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.require_matrix("normalize_rows", a)?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n).take(m) {
            let z: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        self.push(
            Op::NormalizeRows(a),
            Tensor::from_parts(vec![m, n], out),
            Vec::new(),
        )
    }

    /// Row-wise layer normalization with learned `scale` and `shift` of length `n`.
    pub fn layer_norm_rows(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let (m, n) = self.require_matrix("layer_norm_rows", x)?;
        if self.shape(scale) != [n] {
            return Err(self.mismatch("layer_norm_rows", x, scale));
        }
        if self.shape(shift) != [n] {
            return Err(self.mismatch("layer_norm_rows", x, shift));
        }
        let src = self.value(x).data();
        let g = self.value(scale).data();
        let b = self.value(shift).data();
        // saved layout: m*n normalized values followed by m inverse std-devs
        let mut saved = vec![0.0; m * n + m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            saved[m * n + i] = inv;
            for j in 0..n {
                let xhat = (row[j] - mu) * inv;
                saved[i * n + j] = xhat;
                out[i * n + j] = xhat * g[j] + b[j];
            }
        }
        self.push(
            Op::LayerNormRows { x, scale, shift },
            Tensor::from_parts(vec![m, n], out),
            saved,
        )
    }

    /// Row-wise inner products of two `m x d` matrices, giving a length-`m` vector.
    pub fn dot_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, d) = self.require_matrix("dot_rows", a)?;
        if self.shape(b) != [m, d] {
            return Err(self.mismatch("dot_rows", a, b));
        }
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let out = (0..m)
            .map(|i| {
                x[i * d..(i + 1) * d]
                    .iter()
                    .zip(&y[i * d..(i + 1) * d])
                    .map(|(p, q)| p * q)
                    .sum()
            })
            .collect();
        self.push(
            Op::DotRows(a, b),
            Tensor::from_parts(vec![m], out),
            Vec::new(),
        )
    }

    /// Euclidean norm of all entries.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let n = self
            .value(a)
            .data()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        self.push(Op::L2Norm(a), Tensor::scalar(n), Vec::new())
    }

    /// Sparse-dense product `s * x` with a constant sparse left operand.
    pub fn spmm(&mut self, s: Arc<CsrMatrix>, x: Var) -> Result<Var> {
        let (m, d) = self.require_matrix("spmm", x)?;
        if s.cols() != m {
            return Err(self.invalid("spmm", x, "as many rows as the sparse operand has columns"));
        }
        let out = s.mul_dense(self.value(x).data(), d);
        let rows = s.rows();
        self.push(
            Op::SpMM(s, x),
            Tensor::from_parts(vec![rows, d], out),
            Vec::new(),
        )
    }

    /// Reverse pass from a single-element `output`.
    pub fn backward(&self, output: Var) -> Result<GradientMap> {
        let out_node = &self.nodes[output.0];
        if !out_node.value.is_scalar() {
            return Err(AutodiffError::NotScalar {
                node: output.0,
                shape: out_node.value.shape().to_vec(),
            });
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);

        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Param => {
                    grads[id] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let n = self.shape(*b)[1];
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    // dA = G B^T
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            da[i * k + p] = grow
                                .iter()
                                .zip(&bv[p * n..(p + 1) * n])
                                .map(|(x, y)| x * y)
                                .sum();
                        }
                    }
                    // dB = A^T G
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (o, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += aip * gv;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Transpose(a) => {
                    let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] = g[j * m + i];
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    let neg = g.iter().map(|v| -v).collect();
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, neg);
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let da = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                    let db = g.iter().zip(av).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, g.iter().map(|v| c * v).collect());
                }
                Op::AddRow(x, bias) => {
                    let n = self.shape(*bias)[0];
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        add_into(&mut db, row);
                    }
                    accumulate(&mut grads, *x, g);
                    accumulate(&mut grads, *bias, db);
                }
                Op::ScaleRows(x, factors) => {
                    let n = self.shape(*x)[1];
                    let mut dx = g;
                    for (i, f) in factors.iter().enumerate() {
                        for v in &mut dx[i * n..(i + 1) * n] {
                            *v *= f;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::MaskMul(x, mask) => {
                    let dx = g.iter().zip(mask.iter()).map(|(a, m)| a * m).collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let da = g.iter().zip(y).map(|(gv, s)| gv * s * (1.0 - s)).collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    let da = g
                        .iter()
                        .zip(x)
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::Exp(a) => {
                    let y = node.value.data();
                    let da = g.iter().zip(y).map(|(gv, yv)| gv * yv).collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::Log(a) => {
                    let x = self.value(*a).data();
                    let da = g.iter().zip(x).map(|(gv, xv)| gv / xv).collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::LogSigmoid(a) => {
                    let x = self.value(*a).data();
                    let da = g
                        .iter()
                        .zip(x)
                        .map(|(gv, xv)| gv * stable_sigmoid(-xv))
                        .collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).numel();
                    accumulate(&mut grads, *a, vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).numel();
                    accumulate(&mut grads, *a, vec![g[0] / n as f64; n]);
                }
                Op::GatherRows(table, indices) => {
                    let (rows, d) = (self.shape(*table)[0], self.shape(*table)[1]);
                    let mut dt = vec![0.0; rows * d];
                    for (j, &i) in indices.iter().enumerate() {
                        add_into(&mut dt[i * d..(i + 1) * d], &g[j * d..(j + 1) * d]);
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.value(*p).numel();
                        accumulate(&mut grads, *p, g[offset..offset + len].to_vec());
                        offset += len;
                    }
                }
                Op::SoftmaxRows(a) => {
                    let n = self.shape(*a)[1];
                    let y = node.value.data();
                    let mut da = vec![0.0; y.len()];
                    for ((dr, yr), gr) in da.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..n {
                            dr[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::NormalizeRows(a) => {
                    let n = self.shape(*a)[1];
                    let x = self.value(*a).data();
                    let mut da = vec![0.0; x.len()];
                    for ((dr, xr), gr) in da.chunks_mut(n).zip(x.chunks(n)).zip(g.chunks(n)) {
                        let z: f64 = xr.iter().sum();
                        let gx: f64 = gr.iter().zip(xr).map(|(p, q)| p * q).sum();
                        for j in 0..n {
                            dr[j] = gr[j] / z - gx / (z * z);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::LayerNormRows { x, scale, shift } => {
                    let (m, n) = (self.shape(*x)[0], self.shape(*x)[1]);
                    let gamma = self.value(*scale).data();
                    let (xhat, inv) = node.saved.split_at(m * n);
                    let mut dx = vec![0.0; m * n];
                    let mut dscale = vec![0.0; n];
                    let mut dshift = vec![0.0; n];
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        let xr = &xhat[i * n..(i + 1) * n];
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for j in 0..n {
                            dscale[j] += gr[j] * xr[j];
                            dshift[j] += gr[j];
                            let dxh = gr[j] * gamma[j];
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xr[j];
                        }
                        let nf = n as f64;
                        for j in 0..n {
                            let dxh = gr[j] * gamma[j];
                            dx[i * n + j] =
                                inv[i] / nf * (nf * dxh - sum_dxhat - xr[j] * sum_dxhat_xhat);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *scale, dscale);
                    accumulate(&mut grads, *shift, dshift);
                }
                Op::DotRows(a, b) => {
                    let d = self.shape(*a)[1];
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let mut da = vec![0.0; av.len()];
                    let mut db = vec![0.0; bv.len()];
                    for (i, gi) in g.iter().enumerate() {
                        for j in i * d..(i + 1) * d {
                            da[j] = gi * bv[j];
                            db[j] = gi * av[j];
                        }
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::L2Norm(a) => {
                    let norm = node.value.item();
                    let x = self.value(*a).data();
                    let da = if norm == 0.0 {
                        vec![0.0; x.len()]
                    } else {
                        x.iter().map(|v| g[0] * v / norm).collect()
                    };
                    accumulate(&mut grads, *a, da);
                }
                Op::SpMM(s, x) => {
                    let d = self.shape(*x)[1];
                    accumulate(&mut grads, *x, s.transpose_mul_dense(&g, d));
                }
            }
        }

        let mut map = BTreeMap::new();
        for &p in &self.params {
            let shape = self.shape(p).to_vec();
            let tensor = match grads.get_mut(p.0).and_then(Option::take) {
                Some(data) => Tensor::from_parts(shape, data),
                None => Tensor::zeros(&shape),
            };
            map.insert(p, tensor);
        }
        Ok(GradientMap { grads: map })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], target: Var, delta: Vec<f64>) {
    match &mut grads[target.0] {
        Some(existing) => add_into(existing, &delta),
        slot @ None => *slot = Some(delta),
    }
}
