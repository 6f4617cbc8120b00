//! Tensor-level reverse-mode tape.
//!
//! Every primitive records its parents and whatever forward state its
//! adjoint rule needs. Adjoints are propagated for a whole block of seed rows
//! at once: a node of `n` elements carries an `R × n` adjoint buffer, so a
//! full Jacobian is one sweep with `R = out_dim` identity seeds.

use std::borrow::Cow;

use super::gemm::{gemm, Mat};
use super::{NumericsError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
const LN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    MeanRows(Var),
    L2Normalize {
        x: Var,
        norm: f64,
    },
    Dot(Var, Var),
    Sum(Var),
    Transpose(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Reshape(Var),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Records primitive evaluations for later reverse sweeps.
///
/// Values may be borrowed (model weights) or owned (intermediates). A tape
/// built with [`Tape::single_use`] refuses a second reverse sweep.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    single_use: bool,
    consumed: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one output component with respect to every differentiable leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<(Var, Tensor)>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads
            .binary_search_by_key(&var, |(v, _)| *v)
            .ok()
            .map(|i| &self.grads[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.grads.iter().map(|(v, t)| (*v, t))
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            single_use: false,
            consumed: false,
        }
    }

    /// A tape that allows exactly one reverse sweep.
    pub fn single_use() -> Self {
        Self {
            single_use: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn needs_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_owned(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push(Cow::Owned(value), op, needs_grad)
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// Borrowed tensor, differentiable when `trainable` is set.
    pub fn param(&mut self, value: &'a Tensor, trainable: bool) -> Var {
        let op = if trainable { Op::Leaf } else { Op::Constant };
        self.push(Cow::Borrowed(value), op, trainable)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Constant, false)
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> NumericsError {
        NumericsError::ShapeMismatch {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    fn dims2(&self, op: &'static str, x: Var) -> Result<(usize, usize), NumericsError> {
        self.value(x).dims2().ok_or_else(|| NumericsError::Rank {
            op,
            expected: 2,
            shape: self.shape(x).to_vec(),
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            Mat::row_major(self.value(a).data(), k),
            Mat::row_major(self.value(b).data(), n),
            &mut out,
            false,
        );
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push_owned(t, Op::MatMul(a, b), &[a, b]))
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(name, a, b));
        }
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push_owned(t, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`n` bias to every row of an `m × n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let (_, n) = self.dims2("add_bias", x)?;
        if self.shape(bias) != [n] {
            return Err(self.mismatch("add_bias", x, bias));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (v, bj) in row.iter_mut().zip(b) {
                *v += bj;
            }
        }
        Ok(self.push_owned(out, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x).scale(c);
        self.push_owned(t, Op::Scale(x, c), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::tanh);
        self.push_owned(t, Op::Tanh(x), &[x])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(gelu);
        self.push_owned(t, Op::Gelu(x), &[x])
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, NumericsError> {
        let (_, n) = self.dims2("softmax", x)?;
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }
        Ok(self.push_owned(out, Op::SoftmaxRows(x), &[x]))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.dims2("layer_norm", x)?;
        if self.shape(gamma) != [n] {
            return Err(self.mismatch("layer_norm", x, gamma));
        }
        if self.shape(beta) != [n] {
            return Err(self.mismatch("layer_norm", x, beta));
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xs[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push_owned(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// Mean over the token (row) axis: `m × n → n`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.dims2("mean_pool", x)?;
        if m == 0 {
            return Err(NumericsError::Empty { op: "mean_pool" });
        }
        let mut out = vec![0.0; n];
        for row in self.value(x).data().chunks(n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        Ok(self.push_owned(Tensor::vector(out), Op::MeanRows(x), &[x]))
    }

    /// Scales a vector to unit Euclidean length; the zero vector is an error.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var, NumericsError> {
        let v = self.value(x);
        if v.rank() != 1 {
            return Err(NumericsError::Rank {
                op: "l2_normalize",
                expected: 1,
                shape: v.shape().to_vec(),
            });
        }
        let norm = super::tensor::norm(v.data());
        if norm == 0.0 || !norm.is_finite() {
            return Err(NumericsError::ZeroNorm);
        }
        let t = v.scale(1.0 / norm);
        Ok(self.push_owned(t, Op::L2Normalize { x, norm }, &[x]))
    }

    /// Inner product of two equal-length vectors, giving a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.shape(a) != self.shape(b) || self.value(a).rank() != 1 {
            return Err(self.mismatch("dot", a, b));
        }
        let s = super::tensor::dot(self.value(a).data(), self.value(b).data());
        Ok(self.push_owned(Tensor::scalar(s), Op::Dot(a, b), &[a, b]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push_owned(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, NumericsError> {
        let t = self.value(x).transpose()?;
        Ok(self.push_owned(t, Op::Transpose(x), &[x]))
    }

    /// Columns `start..end` of an `m × n` matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let (m, n) = self.dims2("slice_cols", x)?;
        if start > end || end > n {
            return Err(NumericsError::Range {
                op: "slice_cols",
                start,
                end,
                len: n,
            });
        }
        let w = end - start;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let t = Tensor::new(vec![m, w], out)?;
        Ok(self.push_owned(t, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = *parts
            .first()
            .ok_or(NumericsError::Empty { op: "concat_cols" })?;
        let (m, _) = self.dims2("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.dims2("concat_cols", p)?;
            if pm != m {
                return Err(self.mismatch("concat_cols", first, p));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let t = Tensor::new(vec![m, total], out)?;
        Ok(self.push_owned(t, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Same data under a new shape.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push_owned(t, Op::Reshape(x), &[x]))
    }

    /// Row lookup `table[ids]`, the embedding primitive.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let (v, d) = self.dims2("gather_rows", table)?;
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(NumericsError::Range {
                    op: "gather_rows",
                    start: id,
                    end: id + 1,
                    len: v,
                });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push_owned(
            t,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Gradient of one component of `output` with respect to every
    /// differentiable leaf.
    pub fn backward(&mut self, output: Var, component: usize) -> Result<Gradients, NumericsError> {
        if self.single_use && self.consumed {
            return Err(NumericsError::TapeConsumed);
        }
        let n = self.value(output).len();
        if component >= n {
            return Err(NumericsError::Range {
                op: "backward",
                start: component,
                end: component + 1,
                len: n,
            });
        }
        let mut seed = vec![0.0; n];
        seed[component] = 1.0;
        let adj = self.sweep(output, &seed, 1)?;
        self.consumed = true;
        let mut grads = Vec::new();
        for (i, (node, a)) in self.nodes.iter().zip(adj).enumerate() {
            if matches!(node.op, Op::Leaf) {
                let data = a.unwrap_or_else(|| vec![0.0; node.value.len()]);
                grads.push((Var(i), Tensor::new(node.value.shape().to_vec(), data)?));
            }
        }
        Ok(Gradients { grads })
    }

    /// Vector–Jacobian products for a block of seed rows.
    ///
    /// `seeds` is `R × len(output)`; the result is `R × len(wrt)`. Rows are
    /// independent, so this equals `R` separate reverse sweeps.
    pub fn vjp(&mut self, output: Var, seeds: &Tensor, wrt: Var) -> Result<Tensor, NumericsError> {
        if self.single_use && self.consumed {
            return Err(NumericsError::TapeConsumed);
        }
        let n = self.value(output).len();
        let (rows, cols) = seeds.dims2().ok_or_else(|| NumericsError::Rank {
            op: "vjp",
            expected: 2,
            shape: seeds.shape().to_vec(),
        })?;
        if cols != n {
            return Err(NumericsError::ShapeMismatch {
                op: "vjp",
                lhs: seeds.shape().to_vec(),
                rhs: self.shape(output).to_vec(),
            });
        }
        let mut adj = self.sweep(output, seeds.data(), rows)?;
        self.consumed = true;
        let len = self.value(wrt).len();
        let data = adj[wrt.0].take().unwrap_or_else(|| vec![0.0; rows * len]);
        Tensor::new(vec![rows, len], data)
    }

    fn sweep(
        &self,
        output: Var,
        seed: &[f64],
        rows: usize,
    ) -> Result<Vec<Option<Vec<f64>>>, NumericsError> {
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[output.0] = Some(seed.to_vec());
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            match &node.op {
                Op::Leaf | Op::Constant => {
                    adj[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2().expect("matmul lhs");
                    let n = self.value(*b).shape()[1];
                    if self.needs_grad(*a) {
                        // dA = G · Bᵀ, all seed rows stacked into one product.
                        let bt = Mat::transposed(self.value(*b).data(), n);
                        let dst = slot(&mut adj, *a, rows * m * k);
                        gemm(rows * m, n, k, Mat::row_major(&g, n), bt, dst, true);
                    }
                    if self.needs_grad(*b) {
                        let at = Mat::transposed(self.value(*a).data(), k);
                        let dst = slot(&mut adj, *b, rows * k * n);
                        for r in 0..rows {
                            gemm(
                                k,
                                m,
                                n,
                                at,
                                Mat::row_major(&g[r * m * n..(r + 1) * m * n], n),
                                &mut dst[r * k * n..(r + 1) * k * n],
                                true,
                            );
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (p, sign) in [(*a, 1.0), (*b, 1.0)] {
                        if self.needs_grad(p) {
                            add_scaled(&mut adj, p, &g, sign);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    for (p, sign) in [(*a, 1.0), (*b, -1.0)] {
                        if self.needs_grad(p) {
                            add_scaled(&mut adj, p, &g, sign);
                        }
                    }
                }
                Op::AddBias(x, bias) => {
                    if self.needs_grad(*x) {
                        add_scaled(&mut adj, *x, &g, 1.0);
                    }
                    if self.needs_grad(*bias) {
                        let n = self.value(*bias).len();
                        let per_row = g.len() / rows;
                        let dst = slot(&mut adj, *bias, rows * n);
                        for r in 0..rows {
                            let d = &mut dst[r * n..(r + 1) * n];
                            for chunk in g[r * per_row..(r + 1) * per_row].chunks(n) {
                                for (o, v) in d.iter_mut().zip(chunk) {
                                    *o += v;
                                }
                            }
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let len = node.value.len();
                    for (p, other) in [(*a, *b), (*b, *a)] {
                        if self.needs_grad(p) {
                            let o = self.value(other).data();
                            let dst = slot(&mut adj, p, rows * len);
                            for r in 0..rows {
                                for e in 0..len {
                                    dst[r * len + e] += g[r * len + e] * o[e];
                                }
                            }
                        }
                    }
                }
                Op::Scale(x, c) => {
                    add_scaled(&mut adj, *x, &g, *c);
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    elementwise(&mut adj, *x, &g, |e| 1.0 - y[e] * y[e], y.len());
                }
                Op::Gelu(x) => {
                    let xs = self.value(*x).data();
                    let deriv: Vec<f64> = xs.iter().map(|&v| gelu_deriv(v)).collect();
                    elementwise(&mut adj, *x, &g, |e| deriv[e], deriv.len());
                }
                Op::SoftmaxRows(x) => {
                    let (m, n) = node.value.dims2().expect("softmax rank");
                    let p = node.value.data();
                    let dst = slot(&mut adj, *x, g.len());
                    for r in 0..rows {
                        for i in 0..m {
                            let off = r * m * n + i * n;
                            let gi = &g[off..off + n];
                            let pi = &p[i * n..(i + 1) * n];
                            let s: f64 = gi.iter().zip(pi).map(|(a, b)| a * b).sum();
                            for j in 0..n {
                                dst[off + j] += pi[j] * (gi[j] - s);
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let (m, n) = node.value.dims2().expect("layer_norm rank");
                    let gam = self.value(*gamma).data();
                    if self.needs_grad(*x) {
                        let dst = slot(&mut adj, *x, rows * m * n);
                        let mut gg = vec![0.0; n];
                        for r in 0..rows {
                            for i in 0..m {
                                let off = r * m * n + i * n;
                                let xh = &xhat[i * n..(i + 1) * n];
                                for j in 0..n {
                                    gg[j] = g[off + j] * gam[j];
                                }
                                let mean_g = gg.iter().sum::<f64>() / n as f64;
                                let mean_gx =
                                    gg.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                                for j in 0..n {
                                    dst[off + j] += rstd[i] * (gg[j] - mean_g - xh[j] * mean_gx);
                                }
                            }
                        }
                    }
                    if self.needs_grad(*gamma) {
                        let dst = slot(&mut adj, *gamma, rows * n);
                        for r in 0..rows {
                            for i in 0..m {
                                for j in 0..n {
                                    dst[r * n + j] += g[r * m * n + i * n + j] * xhat[i * n + j];
                                }
                            }
                        }
                    }
                    if self.needs_grad(*beta) {
                        let dst = slot(&mut adj, *beta, rows * n);
                        for r in 0..rows {
                            for i in 0..m {
                                for j in 0..n {
                                    dst[r * n + j] += g[r * m * n + i * n + j];
                                }
                            }
                        }
                    }
                }
                Op::MeanRows(x) => {
                    let (m, n) = self.value(*x).dims2().expect("mean_pool rank");
                    let inv = 1.0 / m as f64;
                    let dst = slot(&mut adj, *x, rows * m * n);
                    for r in 0..rows {
                        for i in 0..m {
                            for j in 0..n {
                                dst[r * m * n + i * n + j] += g[r * n + j] * inv;
                            }
                        }
                    }
                }
                Op::L2Normalize { x, norm } => {
                    let y = node.value.data();
                    let n = y.len();
                    let dst = slot(&mut adj, *x, rows * n);
                    for r in 0..rows {
                        let gr = &g[r * n..(r + 1) * n];
                        let proj: f64 = gr.iter().zip(y).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dst[r * n + j] += (gr[j] - y[j] * proj) / norm;
                        }
                    }
                }
                Op::Dot(a, b) => {
                    for (p, other) in [(*a, *b), (*b, *a)] {
                        if self.needs_grad(p) {
                            let o = self.value(other).data();
                            let n = o.len();
                            let dst = slot(&mut adj, p, rows * n);
                            for r in 0..rows {
                                for j in 0..n {
                                    dst[r * n + j] += g[r] * o[j];
                                }
                            }
                        }
                    }
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    let dst = slot(&mut adj, *x, rows * n);
                    for r in 0..rows {
                        for v in &mut dst[r * n..(r + 1) * n] {
                            *v += g[r];
                        }
                    }
                }
                Op::Transpose(x) => {
                    // node is n × m, parent is m × n
                    let (n, m) = node.value.dims2().expect("transpose rank");
                    let dst = slot(&mut adj, *x, rows * m * n);
                    for r in 0..rows {
                        let off = r * m * n;
                        for i in 0..m {
                            for j in 0..n {
                                dst[off + i * n + j] += g[off + j * m + i];
                            }
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    let (m, w) = node.value.dims2().expect("slice rank");
                    let (_, n) = self.value(*x).dims2().expect("slice parent rank");
                    let dst = slot(&mut adj, *x, rows * m * n);
                    for r in 0..rows {
                        for i in 0..m {
                            let src = &g[r * m * w + i * w..r * m * w + (i + 1) * w];
                            let d0 = r * m * n + i * n + start;
                            for (o, v) in dst[d0..d0 + w].iter_mut().zip(src) {
                                *o += v;
                            }
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let (m, total) = node.value.dims2().expect("concat rank");
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).shape()[1];
                        if self.needs_grad(p) {
                            let dst = slot(&mut adj, p, rows * m * w);
                            for r in 0..rows {
                                for i in 0..m {
                                    let s0 = r * m * total + i * total + offset;
                                    let d0 = r * m * w + i * w;
                                    for (o, v) in dst[d0..d0 + w].iter_mut().zip(&g[s0..s0 + w]) {
                                        *o += v;
                                    }
                                }
                            }
                        }
                        offset += w;
                    }
                }
                Op::Reshape(x) => {
                    add_scaled(&mut adj, *x, &g, 1.0);
                }
                Op::GatherRows { table, ids } => {
                    let (v, d) = self.value(*table).dims2().expect("gather rank");
                    let t = ids.len();
                    let dst = slot(&mut adj, *table, rows * v * d);
                    for r in 0..rows {
                        for (pos, &id) in ids.iter().enumerate() {
                            let s0 = r * t * d + pos * d;
                            let d0 = r * v * d + id * d;
                            for (o, x) in dst[d0..d0 + d].iter_mut().zip(&g[s0..s0 + d]) {
                                *o += x;
                            }
                        }
                    }
                }
            }
        }
        Ok(adj)
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], var: Var, len: usize) -> &mut [f64] {
    adj[var.0].get_or_insert_with(|| vec![0.0; len])
}

/// `adj[var] += a · src`; a first contribution is written without zeroing.
fn add_scaled(adj: &mut [Option<Vec<f64>>], var: Var, src: &[f64], a: f64) {
    match &mut adj[var.0] {
        Some(dst) => {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += a * s;
            }
        }
        empty => *empty = Some(src.iter().map(|s| a * s).collect()),
    }
}

/// `adj[var][r, e] += g[r, e] * factor(e)` over all seed rows.
fn elementwise(
    adj: &mut [Option<Vec<f64>>],
    var: Var,
    g: &[f64],
    factor: impl Fn(usize) -> f64,
    len: usize,
) {
    let f: Vec<f64> = (0..len).map(factor).collect();
    match &mut adj[var.0] {
        Some(dst) => {
            for (chunk_d, chunk_g) in dst.chunks_mut(len).zip(g.chunks(len)) {
                for ((d, x), y) in chunk_d.iter_mut().zip(chunk_g).zip(&f) {
                    *d += x * y;
                }
            }
        }
        empty => {
            *empty = Some(
                g.chunks(len)
                    .flat_map(|chunk| chunk.iter().zip(&f).map(|(x, y)| x * y))
                    .collect(),
            )
        }
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
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

impl<'a> Tape<'a> {
    /// Re-evaluates every node from the recorded leaves and returns the
    /// largest deviation from the stored values.
    pub fn replay_max_deviation(&self) -> Result<f64, NumericsError> {
        let mut fresh = Tape::new();
        let mut worst: f64 = 0.0;
        for node in &self.nodes {
            let v = match &node.op {
                Op::Leaf => fresh.leaf(node.value.as_ref().clone()),
                Op::Constant => fresh.constant(node.value.as_ref().clone()),
                Op::MatMul(a, b) => fresh.matmul(*a, *b)?,
                Op::Add(a, b) => fresh.add(*a, *b)?,
                Op::Sub(a, b) => fresh.sub(*a, *b)?,
                Op::AddBias(x, b) => fresh.add_bias(*x, *b)?,
                Op::Mul(a, b) => fresh.mul(*a, *b)?,
                Op::Scale(x, c) => fresh.scale(*x, *c),
                Op::Tanh(x) => fresh.tanh(*x),
                Op::Gelu(x) => fresh.gelu(*x),
                Op::SoftmaxRows(x) => fresh.softmax_rows(*x)?,
                Op::LayerNorm { x, gamma, beta, .. } => fresh.layer_norm(*x, *gamma, *beta)?,
                Op::MeanRows(x) => fresh.mean_rows(*x)?,
                Op::L2Normalize { x, .. } => fresh.l2_normalize(*x)?,
                Op::Dot(a, b) => fresh.dot(*a, *b)?,
                Op::Sum(x) => fresh.sum(*x),
                Op::Transpose(x) => fresh.transpose(*x)?,
                Op::SliceCols { x, start } => {
                    let w = node.value.shape()[1];
                    fresh.slice_cols(*x, *start, start + w)?
                }
                Op::ConcatCols(parts) => fresh.concat_cols(parts)?,
                Op::Reshape(x) => fresh.reshape(*x, node.value.shape())?,
                Op::GatherRows { table, ids } => fresh.gather_rows(*table, ids)?,
            };
            let replayed = fresh.value(v).data();
            for (x, y) in replayed.iter().zip(node.value.data()) {
                worst = worst.max((x - y).abs());
            }
        }
        Ok(worst)
    }

    /// Every node's parents precede it.
    pub fn is_topologically_ordered(&self) -> bool {
        self.nodes.iter().enumerate().all(|(i, node)| {
            let parents: Vec<Var> = match &node.op {
                Op::Leaf | Op::Constant => Vec::new(),
                Op::MatMul(a, b)
                | Op::Add(a, b)
                | Op::Sub(a, b)
                | Op::AddBias(a, b)
                | Op::Mul(a, b)
                | Op::Dot(a, b) => vec![*a, *b],
                Op::Scale(x, _)
                | Op::Tanh(x)
                | Op::Gelu(x)
                | Op::SoftmaxRows(x)
                | Op::MeanRows(x)
                | Op::L2Normalize { x, .. }
                | Op::Sum(x)
                | Op::Transpose(x)
                | Op::Reshape(x)
                | Op::SliceCols { x, .. } => vec![*x],
                Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
                Op::ConcatCols(parts) => parts.clone(),
                Op::GatherRows { table, .. } => vec![*table],
            };
            parents.iter().all(|p| p.0 < i)
        })
    }
}
