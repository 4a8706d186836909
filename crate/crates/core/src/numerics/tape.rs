//! Reverse-mode differentiation over a linear tape of dense 2-D tensors.
//!
//! Every op appends one node. `backward` walks the tape in reverse and
//! accumulates vector-Jacobian products into per-node gradient buffers.

use rand::Rng;

use super::real::{axpy, dot, gemm_nn, gemm_nt, gemm_tn, Real};
use super::tensor::Tensor;
use crate::error::{BicError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<R> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, R),
    MulScalar(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    LeakyRelu(Var, R),
    Sigmoid(Var),
    Dropout(Var, Vec<R>),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<R>,
        inv_std: Vec<R>,
    },
    Dot(Var, Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<R>,
        labels: Vec<usize>,
    },
    SumSquares(Var),
}

#[derive(Debug)]
struct Node<R> {
    value: Tensor<R>,
    op: Op<R>,
    requires_grad: bool,
}

/// Row/column masks for a masked softmax. Masked entries get probability 0;
/// a fully masked row is all zeros.
#[derive(Clone, Copy, Debug, Default)]
pub struct SoftmaxMask<'a> {
    pub rows: Option<&'a [bool]>,
    pub cols: Option<&'a [bool]>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<R> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    pub fn get(&self, v: Var) -> Option<&Tensor<R>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<R>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Recording tape. One tape per forward pass; not shared across threads.
#[derive(Debug)]
pub struct Tape<R> {
    nodes: Vec<Node<R>>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

/// Max over the floor-partitioned bands of an `n×n` matrix, `k` bands per axis.
/// Band `b` covers `⌊b·n/k⌋ .. ⌊(b+1)·n/k⌋ - 1`.
pub(crate) fn band_bounds(n: usize, k: usize, b: usize) -> (usize, usize) {
    (b * n / k, (b + 1) * n / k)
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Tensor<R>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(BicError::dim("matmul", &sa, &sb));
        }
        let mut out = Tensor::zeros(sa[0], sb[1]);
        gemm_nn(
            self.value(a).data(),
            self.value(b).data(),
            out.data_mut(),
            sa[0],
            sa[1],
            sb[1],
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[1] {
            return Err(BicError::dim("matmul_nt", &sa, &sb));
        }
        let mut out = Tensor::zeros(sa[0], sb[0]);
        gemm_nt(
            self.value(a).data(),
            self.value(b).data(),
            out.data_mut(),
            sa[0],
            sa[1],
            sb[0],
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulNt(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(BicError::dim(op, &sa, &sb));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(R, R) -> R) -> Tensor<R> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.rows(), va.cols(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(R) -> R) -> Tensor<R> {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        Tensor::new(va.rows(), va.cols(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Adds the `1×m` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr[0] != 1 || sr[1] != sa[1] {
            return Err(BicError::dim("add_row", &sa, &sr));
        }
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for chunk in out.data_mut().chunks_exact_mut(sa[1]) {
            for (o, &x) in chunk.iter_mut().zip(&r) {
                *o += x;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    /// `c · a` for a constant `c`.
    pub fn scale(&mut self, a: Var, c: R) -> Var {
        let out = self.map(a, |x| x * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// `s · a` where `s` is a recorded `1×1` scalar.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let ss = self.shape(s);
        if ss != [1, 1] {
            return Err(BicError::dim("mul_scalar", &self.shape(a), &ss));
        }
        let sv = self.value(s).item();
        let out = self.map(a, |x| x * sv);
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(out, Op::MulScalar(a, s), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| BicError::Size("concat of zero tensors".into()))?;
        let rows = self.shape(first)[0];
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[0] != rows {
                return Err(BicError::dim("concat_cols", &self.shape(first), &s));
            }
            cols += s[1];
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| BicError::Size("concat of zero tensors".into()))?;
        let cols = self.shape(first)[1];
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[1] != cols {
                return Err(BicError::dim("concat_rows", &self.shape(first), &s));
            }
            rows += s[0];
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if len == 0 || start + len > s[0] {
            return Err(BicError::dim("slice_rows", &s, &[start, len]));
        }
        let data = self.value(a).data()[start * s[1]..(start + len) * s[1]].to_vec();
        let out = Tensor::new(len, s[1], data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceRows(a, start), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if len == 0 || start + len > s[1] {
            return Err(BicError::dim("slice_cols", &s, &[start, len]));
        }
        let va = self.value(a);
        let mut data = Vec::with_capacity(s[0] * len);
        for r in 0..s[0] {
            data.extend_from_slice(&va.row(r)[start..start + len]);
        }
        let out = Tensor::new(s[0], len, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let s = self.shape(a);
        if rows * cols != s[0] * s[1] {
            return Err(BicError::dim("reshape", &s, &[rows, cols]));
        }
        let out = Tensor::new(rows, cols, self.value(a).data().to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Row-major flatten into a `1×n` row.
    pub fn flatten(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        self.reshape(a, 1, n).expect("same element count")
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: R = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: R = v.data().iter().copied().sum::<R>() / R::lit(v.len() as f64);
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Column-wise mean over rows, `n×m → 1×m`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let (n, m) = (v.rows(), v.cols());
        let mut out = vec![R::zero(); m];
        for r in 0..n {
            for (o, &x) in out.iter_mut().zip(v.row(r)) {
                *o += x;
            }
        }
        let inv = R::one() / R::lit(n as f64);
        out.iter_mut().for_each(|o| *o *= inv);
        let rg = self.rg(a);
        self.push(Tensor::row_vector(&out), Op::MeanRows(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, R::zero())
    }

    pub fn leaky_relu(&mut self, a: Var, slope: R) -> Var {
        let out = self.map(a, |x| if x > R::zero() { x } else { x * slope });
        let rg = self.rg(a);
        self.push(out, Op::LeakyRelu(a, slope), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| {
            if x >= R::zero() {
                R::one() / (R::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (R::one() + e)
            }
        });
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    /// Inverted dropout. With `rng = None` or `p = 0` this is the identity
    /// and records nothing.
    pub fn dropout<G: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: Option<&mut G>) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(BicError::Config(format!("dropout probability {p} not in [0, 1)")));
        }
        let Some(rng) = rng else { return Ok(a) };
        if p == 0.0 {
            return Ok(a);
        }
        let keep = R::lit(1.0 / (1.0 - p));
        let mask: Vec<R> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < p { R::zero() } else { keep })
            .collect();
        let va = self.value(a);
        let data = va.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let out = Tensor::new(va.rows(), va.cols(), data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Dropout(a, mask), rg))
    }

    /// Softmax along `axis` (1: each row sums to 1, 0: each column sums to 1).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        match axis {
            1 => self.softmax_masked(a, SoftmaxMask::default()),
            0 => {
                let t = self.transpose(a);
                let s = self.softmax_masked(t, SoftmaxMask::default())?;
                Ok(self.transpose(s))
            }
            _ => Err(BicError::Config(format!("softmax axis {axis} out of range"))),
        }
    }

    /// Row-wise softmax with max-subtraction. Masked rows/columns get weight 0.
    pub fn softmax_masked(&mut self, a: Var, mask: SoftmaxMask<'_>) -> Result<Var> {
        let s = self.shape(a);
        if let Some(rm) = mask.rows {
            if rm.len() != s[0] {
                return Err(BicError::dim("softmax row mask", &s, &[rm.len()]));
            }
        }
        if let Some(cm) = mask.cols {
            if cm.len() != s[1] {
                return Err(BicError::dim("softmax col mask", &s, &[cm.len()]));
            }
        }
        let col_on = |j: usize| mask.cols.is_none_or(|m| m[j]);
        let va = self.value(a);
        let mut out = Tensor::zeros(s[0], s[1]);
        for r in 0..s[0] {
            if !mask.rows.is_none_or(|m| m[r]) {
                continue;
            }
            let row = va.row(r);
            let mut mx = R::neg_infinity();
            for (j, &x) in row.iter().enumerate() {
                if col_on(j) && x > mx {
                    mx = x;
                }
            }
            if mx == R::neg_infinity() {
                continue;
            }
            let orow = &mut out.data_mut()[r * s[1]..(r + 1) * s[1]];
            let mut z = R::zero();
            for (j, &x) in row.iter().enumerate() {
                if col_on(j) {
                    let e = (x - mx).exp();
                    orow[j] = e;
                    z += e;
                }
            }
            let inv = R::one() / z;
            orow.iter_mut().for_each(|o| *o *= inv);
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// Row-wise layer normalization followed by `gamma ⊙ x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x);
        for p in [gamma, beta] {
            let sp = self.shape(p);
            if sp != [1, s[1]] {
                return Err(BicError::dim("layer_norm", &s, &sp));
            }
        }
        let (n, m) = (s[0], s[1]);
        let eps = R::lit(eps);
        let inv_m = R::one() / R::lit(m as f64);
        let vx = self.value(x);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![R::zero(); n * m];
        let mut inv_std = vec![R::zero(); n];
        let mut out = Tensor::zeros(n, m);
        for r in 0..n {
            let row = vx.row(r);
            let mu = row.iter().copied().sum::<R>() * inv_m;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<R>() * inv_m;
            let is = R::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..m {
                let xh = (row[j] - mu) * is;
                xhat[r * m + j] = xh;
                out.data_mut()[r * m + j] = g[j] * xh + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Sum of elementwise products of two same-shaped tensors, as `1×1`.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let v = dot(self.value(a).data(), self.value(b).data());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(v), Op::Dot(a, b), rg))
    }

    /// Fixed-size max pooling of a square `n×n` matrix to `k×k` using
    /// floor-partitioned contiguous bands.
    pub fn maxpool_fixed(&mut self, a: Var, k: usize) -> Result<Var> {
        let s = self.shape(a);
        if s[0] != s[1] {
            return Err(BicError::dim("maxpool_fixed (square input)", &s, &[k, k]));
        }
        let n = s[0];
        if k == 0 || k > n {
            return Err(BicError::Size(format!(
                "pool size {k} exceeds matrix size {n}"
            )));
        }
        let va = self.value(a);
        let mut out = Tensor::zeros(k, k);
        let mut argmax = vec![0usize; k * k];
        for bi in 0..k {
            let (r0, r1) = band_bounds(n, k, bi);
            for bj in 0..k {
                let (c0, c1) = band_bounds(n, k, bj);
                let mut best = R::neg_infinity();
                let mut at = r0 * n + c0;
                for r in r0..r1 {
                    for c in c0..c1 {
                        let v = va.get(r, c);
                        if v > best {
                            best = v;
                            at = r * n + c;
                        }
                    }
                }
                out.set(bi, bj, best);
                argmax[bi * k + bj] = at;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::MaxPool { x: a, argmax }, rg))
    }

    /// Mean softmax cross-entropy of `logits` (`B×C`) against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if labels.len() != s[0] {
            return Err(BicError::dim("cross_entropy", &s, &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= s[1]) {
            return Err(BicError::Config(format!(
                "label {bad} out of range for {} classes",
                s[1]
            )));
        }
        let vl = self.value(logits);
        let mut probs = vec![R::zero(); s[0] * s[1]];
        let mut loss = R::zero();
        for r in 0..s[0] {
            let row = vl.row(r);
            let mx = row.iter().copied().fold(R::neg_infinity(), R::max);
            let z: R = row.iter().map(|&x| (x - mx).exp()).sum();
            let lz = z.ln() + mx;
            for j in 0..s[1] {
                probs[r * s[1] + j] = (row[j] - lz).exp();
            }
            loss += lz - row[labels[r]];
        }
        loss /= R::lit(s[0] as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_squares();
        let rg = self.rg(a);
        self.push(Tensor::scalar(v), Op::SumSquares(a), rg)
    }

    /// Back-propagates from the scalar `loss`. Every node reachable from
    /// `loss` that requires a gradient gets one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<R>> {
        let s = self.shape(loss);
        if s != [1, 1] {
            return Err(BicError::dim("backward (scalar loss)", &s, &[1, 1]));
        }
        let mut grads: Vec<Option<Vec<R>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![R::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let (lo, hi) = grads.split_at_mut(i);
            let Some(g) = hi[0].as_deref() else { continue };
            self.backprop_node(node, g, lo);
        }

        Ok(Gradients {
            grads: grads
                .into_iter()
                .enumerate()
                .map(|(i, g)| {
                    g.map(|d| {
                        let v = &self.nodes[i].value;
                        Tensor::new(v.rows(), v.cols(), d).expect("gradient shape")
                    })
                })
                .collect(),
        })
    }

    fn buf<'a>(&self, lo: &'a mut [Option<Vec<R>>], v: Var) -> Option<&'a mut Vec<R>> {
        if !self.rg(v) {
            return None;
        }
        let len = self.value(v).len();
        Some(lo[v.0].get_or_insert_with(|| vec![R::zero(); len]))
    }

    fn backprop_node(&self, node: &Node<R>, g: &[R], lo: &mut [Option<Vec<R>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (n, k, m) = (sa[0], sa[1], sb[1]);
                if let Some(ga) = self.buf(lo, *a) {
                    // dA = dC · Bᵀ
                    gemm_nt(g, self.value(*b).data(), ga, n, m, k);
                }
                if let Some(gb) = self.buf(lo, *b) {
                    // dB = Aᵀ · dC
                    gemm_tn(self.value(*a).data(), g, gb, n, k, m);
                }
            }
            Op::MatMulNt(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (n, k, m) = (sa[0], sa[1], sb[0]);
                if let Some(ga) = self.buf(lo, *a) {
                    // dA = dC · B
                    gemm_nn(g, self.value(*b).data(), ga, n, m, k);
                }
                if let Some(gb) = self.buf(lo, *b) {
                    // dB = dCᵀ · A
                    gemm_tn(g, self.value(*a).data(), gb, n, m, k);
                }
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                if let Some(ga) = self.buf(lo, *a) {
                    for r in 0..s[0] {
                        for c in 0..s[1] {
                            ga[r * s[1] + c] += g[c * s[0] + r];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.buf(lo, v) {
                        axpy(R::one(), g, gv);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.buf(lo, *a) {
                    axpy(R::one(), g, ga);
                }
                if let Some(gb) = self.buf(lo, *b) {
                    axpy(-R::one(), g, gb);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let vb = self.value(*b).data();
                    let ga = self.buf(lo, *a).expect("requires grad");
                    for ((o, &gi), &bi) in ga.iter_mut().zip(g).zip(vb) {
                        *o += gi * bi;
                    }
                }
                if self.rg(*b) {
                    let va = self.value(*a).data();
                    let gb = self.buf(lo, *b).expect("requires grad");
                    for ((o, &gi), &ai) in gb.iter_mut().zip(g).zip(va) {
                        *o += gi * ai;
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(ga) = self.buf(lo, *a) {
                    axpy(R::one(), g, ga);
                }
                let m = self.shape(*row)[1];
                if let Some(gr) = self.buf(lo, *row) {
                    for chunk in g.chunks_exact(m) {
                        axpy(R::one(), chunk, gr);
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.buf(lo, *a) {
                    axpy(*c, g, ga);
                }
            }
            Op::MulScalar(a, s) => {
                let sv = self.value(*s).item();
                if let Some(ga) = self.buf(lo, *a) {
                    axpy(sv, g, ga);
                }
                if self.rg(*s) {
                    let d = dot(g, self.value(*a).data());
                    self.buf(lo, *s).expect("requires grad")[0] += d;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = out.rows();
                let total = out.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if let Some(gp) = self.buf(lo, p) {
                        for r in 0..rows {
                            axpy(
                                R::one(),
                                &g[r * total + off..r * total + off + w],
                                &mut gp[r * w..(r + 1) * w],
                            );
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(gp) = self.buf(lo, p) {
                        axpy(R::one(), &g[off..off + len], gp);
                    }
                    off += len;
                }
            }
            Op::SliceRows(a, start) => {
                let m = out.cols();
                if let Some(ga) = self.buf(lo, *a) {
                    axpy(R::one(), g, &mut ga[start * m..start * m + g.len()]);
                }
            }
            Op::SliceCols(a, start) => {
                let sa = self.shape(*a);
                let w = out.cols();
                if let Some(ga) = self.buf(lo, *a) {
                    for r in 0..sa[0] {
                        axpy(
                            R::one(),
                            &g[r * w..(r + 1) * w],
                            &mut ga[r * sa[1] + start..r * sa[1] + start + w],
                        );
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.buf(lo, *a) {
                    axpy(R::one(), g, ga);
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.buf(lo, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mean(a) => {
                let n = R::lit(self.value(*a).len() as f64);
                if let Some(ga) = self.buf(lo, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0] / n);
                }
            }
            Op::MeanRows(a) => {
                let s = self.shape(*a);
                let inv = R::one() / R::lit(s[0] as f64);
                if let Some(ga) = self.buf(lo, *a) {
                    for chunk in ga.chunks_exact_mut(s[1]) {
                        axpy(inv, g, chunk);
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                let va = self.value(*a).data();
                if let Some(ga) = self.buf(lo, *a) {
                    for ((o, &gi), &x) in ga.iter_mut().zip(g).zip(va) {
                        *o += if x > R::zero() { gi } else { gi * *slope };
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.buf(lo, *a) {
                    for ((o, &gi), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                        *o += gi * y * (R::one() - y);
                    }
                }
            }
            Op::Dropout(a, mask) => {
                if let Some(ga) = self.buf(lo, *a) {
                    for ((o, &gi), &mk) in ga.iter_mut().zip(g).zip(mask) {
                        *o += gi * mk;
                    }
                }
            }
            Op::Softmax(a) => {
                let m = out.cols();
                if let Some(ga) = self.buf(lo, *a) {
                    for r in 0..out.rows() {
                        let y = out.row(r);
                        let gr = &g[r * m..(r + 1) * m];
                        let s = dot(y, gr);
                        let orow = &mut ga[r * m..(r + 1) * m];
                        for j in 0..m {
                            orow[j] += y[j] * (gr[j] - s);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let m = out.cols();
                let n = out.rows();
                if let Some(gb) = self.buf(lo, *beta) {
                    for chunk in g.chunks_exact(m) {
                        axpy(R::one(), chunk, gb);
                    }
                }
                if let Some(gg) = self.buf(lo, *gamma) {
                    for r in 0..n {
                        for j in 0..m {
                            gg[j] += g[r * m + j] * xhat[r * m + j];
                        }
                    }
                }
                if self.rg(*x) {
                    let gam = self.value(*gamma).data().to_vec();
                    let inv_m = R::one() / R::lit(m as f64);
                    let gx = self.buf(lo, *x).expect("requires grad");
                    for r in 0..n {
                        let xh = &xhat[r * m..(r + 1) * m];
                        let dxh: Vec<R> = (0..m).map(|j| g[r * m + j] * gam[j]).collect();
                        let mean_d = dxh.iter().copied().sum::<R>() * inv_m;
                        let mean_dx = dot(&dxh, xh) * inv_m;
                        for j in 0..m {
                            gx[r * m + j] += inv_std[r] * (dxh[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                }
            }
            Op::Dot(a, b) => {
                if self.rg(*a) {
                    let vb = self.value(*b).data();
                    axpy(g[0], vb, self.buf(lo, *a).expect("requires grad"));
                }
                if self.rg(*b) {
                    let va = self.value(*a).data();
                    axpy(g[0], va, self.buf(lo, *b).expect("requires grad"));
                }
            }
            Op::MaxPool { x, argmax } => {
                if let Some(gx) = self.buf(lo, *x) {
                    for (&at, &gi) in argmax.iter().zip(g) {
                        gx[at] += gi;
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let c = self.shape(*logits)[1];
                let scale = g[0] / R::lit(labels.len() as f64);
                if let Some(gl) = self.buf(lo, *logits) {
                    for (r, &y) in labels.iter().enumerate() {
                        for j in 0..c {
                            let ind = if j == y { R::one() } else { R::zero() };
                            gl[r * c + j] += scale * (probs[r * c + j] - ind);
                        }
                    }
                }
            }
            Op::SumSquares(a) => {
                let va = self.value(*a).data();
                if let Some(ga) = self.buf(lo, *a) {
                    axpy(g[0] + g[0], va, ga);
                }
            }
        }
    }
}
