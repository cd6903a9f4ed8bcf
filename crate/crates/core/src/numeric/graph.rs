use std::sync::Arc;

use super::tensor::gemm;
use super::{NumericError, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
pub const LAYER_NORM_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, tb: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    SliceCols { x: Var, start: usize },
    GatherRows { table: Var, idx: Vec<usize> },
    Gelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    MaskedSoftmax(Var),
    Sum(Var),
    Mean(Var),
    PairLogits { intr: Var, u: Var, v: Var, group: usize },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64>, count: usize },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the
/// construction order is a topological order and `backward` walks it in
/// reverse exactly once.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(msg: String) -> NumericError {
    NumericError::Shape(msg)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var, NumericError> {
        if !value.all_finite() {
            return Err(NumericError::NonFinite(name));
        }
        self.nodes.push(Node { value: Arc::new(value), op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn rc(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.rows_cols()
    }

    /// Records a shared tensor (typically a parameter) without copying it.
    pub fn leaf(&mut self, t: Arc<Tensor>, requires_grad: bool) -> Result<Var, NumericError> {
        if !t.all_finite() {
            return Err(NumericError::NonFinite("leaf"));
        }
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var, NumericError> {
        self.push(t, Op::Leaf, false, "constant")
    }

    pub fn variable(&mut self, t: Tensor) -> Result<Var, NumericError> {
        self.push(t, Op::Leaf, true, "variable")
    }

    /// `a · b` (or `a · bᵀ` via [`Graph::matmul_nt`]).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.matmul_impl(a, b, false)
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, tb: bool) -> Result<Var, NumericError> {
        let (m, k) = self.rc(a);
        let (br, bc) = self.rc(b);
        let (kb, n) = if tb { (bc, br) } else { (br, bc) };
        if self.value(a).shape().len() != 2 || self.value(b).shape().len() != 2 || k != kb {
            return Err(shape_err(format!(
                "matmul: cannot multiply {:?} by {:?}{}",
                self.value(a).shape(),
                self.value(b).shape(),
                if tb { "ᵀ" } else { "" }
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), tb, &mut out, false);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b, tb }, rg, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(format!(
                "add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let out: Vec<f64> =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(shape, out)?, Op::Add(a, b), rg, "add")
    }

    /// Adds a length-`c` vector to every row of an `r×c` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, NumericError> {
        let (r, c) = self.rc(x);
        if self.value(bias).len() != c {
            return Err(shape_err(format!(
                "add_row: bias {:?} does not match row width {}",
                self.value(bias).shape(),
                c
            )));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(c.max(1)) {
            row.iter_mut().zip(b).for_each(|(o, bv)| *o += bv);
        }
        let rg = self.rg(&[x, bias]);
        self.push(Tensor::new(vec![r, c], out)?, Op::AddRow(x, bias), rg, "add_row")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(format!(
                "mul: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let out: Vec<f64> =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(shape, out)?, Op::Mul(a, b), rg, "mul")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var, NumericError> {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v * s).collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::new(shape, out)?, Op::Scale(x, s), rg, "scale")
    }

    /// Concatenates matrices with equal row counts along the last dimension.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let first = parts.first().ok_or_else(|| shape_err("concat: no inputs".into()))?;
        let (r, _) = self.rc(*first);
        let widths: Vec<usize> = parts.iter().map(|p| self.rc(*p).1).collect();
        if parts.iter().any(|p| self.rc(*p).0 != r) {
            return Err(shape_err("concat: row counts differ".into()));
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; r * total];
        let mut off = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let src = self.value(*p).data();
            for row in 0..r {
                out[row * total + off..row * total + off + w].copy_from_slice(&src[row * w..(row + 1) * w]);
            }
            off += w;
        }
        let rg = self.rg(parts);
        self.push(Tensor::new(vec![r, total], out)?, Op::Concat(parts.to_vec()), rg, "concat")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericError> {
        let (r, c) = self.rc(x);
        if start + len > c {
            return Err(shape_err(format!("slice_cols: {}..{} out of {} columns", start, start + len, c)));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * len);
        for row in 0..r {
            out.extend_from_slice(&src[row * c + start..row * c + start + len]);
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(vec![r, len], out)?, Op::SliceCols { x, start }, rg, "slice_cols")
    }

    /// Embedding lookup: rows of `table` selected by `idx` (repeats allowed).
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var, NumericError> {
        let (r, c) = self.rc(table);
        if let Some(bad) = idx.iter().find(|&&i| i >= r) {
            return Err(shape_err(format!("gather_rows: index {} out of {} rows", bad, r)));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.rg(&[table]);
        self.push(
            Tensor::new(vec![idx.len(), c], out)?,
            Op::GatherRows { table, idx: idx.to_vec() },
            rg,
            "gather_rows",
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var, NumericError> {
        let out: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
            .collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::new(shape, out)?, Op::Gelu(x), rg, "gelu")
    }

    /// Per-row normalisation (population variance, eps 1e-5) followed by `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NumericError> {
        let (r, d) = self.rc(x);
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(shape_err(format!(
                "layer_norm: last dimension {} vs gain {:?} / bias {:?}",
                d,
                self.value(gain).shape(),
                self.value(bias).shape()
            )));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; r * d];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * d];
        for row in 0..r {
            let xs = &src[row * d..(row + 1) * d];
            let mean = xs.iter().sum::<f64>() / d as f64;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[row] = rs;
            for c in 0..d {
                let h = (xs[c] - mean) * rs;
                xhat[row * d + c] = h;
                out[row * d + c] = h * g[c] + b[c];
            }
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(&[x, gain, bias]);
        self.push(Tensor::new(shape, out)?, Op::LayerNorm { x, gain, bias, xhat, rstd }, rg, "layer_norm")
    }

    /// Row-wise softmax restricted to entries where `allow` is true; every
    /// other entry is exactly zero and receives no gradient.
    pub fn masked_softmax(&mut self, scores: Var, allow: &[bool]) -> Result<Var, NumericError> {
        let (r, c) = self.rc(scores);
        if allow.len() != r * c {
            return Err(shape_err(format!(
                "masked_softmax: mask has {} entries for a {}×{} score matrix",
                allow.len(),
                r,
                c
            )));
        }
        let src = self.value(scores).data();
        let mut out = vec![0.0; r * c];
        for row in 0..r {
            let s = &src[row * c..(row + 1) * c];
            let m = &allow[row * c..(row + 1) * c];
            let max = s
                .iter()
                .zip(m)
                .filter(|(_, &a)| a)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(NumericError::FullyMasked { row });
            }
            let o = &mut out[row * c..(row + 1) * c];
            let mut total = 0.0;
            for j in 0..c {
                if m[j] {
                    let e = (s[j] - max).exp();
                    o[j] = e;
                    total += e;
                }
            }
            o.iter_mut().for_each(|v| *v /= total);
        }
        let rg = self.rg(&[scores]);
        self.push(Tensor::new(vec![r, c], out)?, Op::MaskedSoftmax(scores), rg, "masked_softmax")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NumericError> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, NumericError> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(shape_err("mean of empty tensor".into()));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg, "mean")
    }

    /// Combined action logits for groups of `group` consecutive rows.
    ///
    /// Row `r` of the output is `intr[r] ⊕ (u[r] + v[g·group + j])_{j<group}`
    /// where `g = r / group`: intrinsic logits followed by one pairwise
    /// logit per receiver in the same group.
    pub fn pair_logits(&mut self, intr: Var, u: Var, v: Var, group: usize) -> Result<Var, NumericError> {
        let (r, k) = self.rc(intr);
        if group == 0 || r % group != 0 || self.value(u).len() != r || self.value(v).len() != r {
            return Err(shape_err(format!(
                "pair_logits: {} rows, group {}, u {:?}, v {:?}",
                r,
                group,
                self.value(u).shape(),
                self.value(v).shape()
            )));
        }
        let width = k + group;
        let (iv, uv, vv) = (self.value(intr).data(), self.value(u).data(), self.value(v).data());
        let mut out = vec![0.0; r * width];
        for row in 0..r {
            let base = (row / group) * group;
            let o = &mut out[row * width..(row + 1) * width];
            o[..k].copy_from_slice(&iv[row * k..(row + 1) * k]);
            for j in 0..group {
                o[k + j] = uv[row] + vv[base + j];
            }
        }
        let rg = self.rg(&[intr, u, v]);
        self.push(Tensor::new(vec![r, width], out)?, Op::PairLogits { intr, u, v, group }, rg, "pair_logits")
    }

    /// Mean cross-entropy of the rows that carry a target; rows with `None`
    /// contribute nothing and are not counted in the denominator.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var, NumericError> {
        self.masked_cross_entropy(logits, targets, None)
    }

    /// [`cross_entropy`](Self::cross_entropy) with the softmax restricted to
    /// entries flagged in `allow` (row-major, same shape as `logits`).
    /// Disallowed entries get probability zero and no gradient; a target
    /// must itself be allowed.
    pub fn masked_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        allow: Option<&[bool]>,
    ) -> Result<Var, NumericError> {
        let (r, c) = self.rc(logits);
        if targets.len() != r {
            return Err(shape_err(format!("cross_entropy: {} targets for {} rows", targets.len(), r)));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= c) {
            return Err(shape_err(format!("cross_entropy: target {} out of {} classes", bad, c)));
        }
        if let Some(a) = allow {
            if a.len() != r * c {
                return Err(shape_err(format!("cross_entropy: mask has {} entries for {}×{}", a.len(), r, c)));
            }
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(NumericError::EmptyTargets);
        }
        let ok = |row: usize, j: usize| allow.is_none_or(|a| a[row * c + j]);
        let src = self.value(logits).data();
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for (row, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if !ok(row, t) {
                return Err(shape_err(format!("cross_entropy: target {} of row {} is masked out", t, row)));
            }
            let s = &src[row * c..(row + 1) * c];
            let max = (0..c).filter(|&j| ok(row, j)).map(|j| s[j]).fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = (0..c).filter(|&j| ok(row, j)).map(|j| (s[j] - max).exp()).sum();
            let lse = max + total.ln();
            for j in (0..c).filter(|&j| ok(row, j)) {
                probs[row * c + j] = (s[j] - lse).exp();
            }
            loss += lse - s[t];
        }
        let rg = self.rg(&[logits]);
        self.push(
            Tensor::scalar(loss / count as f64),
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count },
            rg,
            "cross_entropy",
        )
    }

    /// Reverse pass from a scalar. Only nodes that (transitively) depend on a
    /// gradient-requiring leaf receive gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(NumericError::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.backprop_node(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        for g in grads.iter().flatten() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NumericError::NonFinite("backward"));
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, tb } => {
                let (m, k) = self.rc(*a);
                let n = node.value.rows_cols().1;
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |da| {
                    // dA = dC · op(B)ᵀ
                    gemm(m, n, k, g, false, bv, !tb, da, true);
                });
                acc(*b, &mut |db| {
                    if *tb {
                        // B is n×k: dB = dCᵀ · A
                        gemm(n, m, k, g, true, av, false, db, true);
                    } else {
                        // B is k×n: dB = Aᵀ · dC
                        gemm(k, m, n, av, true, g, false, db, true);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::AddRow(x, bias) => {
                let c = node.value.rows_cols().1.max(1);
                acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*bias, &mut |d| {
                    for row in g.chunks(c) {
                        d.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(x, s) => acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += s * y)),
            Op::Concat(parts) => {
                let (r, total) = node.value.rows_cols();
                let mut off = 0;
                for p in parts {
                    let w = self.rc(*p).1;
                    acc(*p, &mut |d| {
                        for row in 0..r {
                            for c in 0..w {
                                d[row * w + c] += g[row * total + off + c];
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (r, len) = node.value.rows_cols();
                let c = self.rc(*x).1;
                acc(*x, &mut |d| {
                    for row in 0..r {
                        for j in 0..len {
                            d[row * c + start + j] += g[row * len + j];
                        }
                    }
                });
            }
            Op::GatherRows { table, idx } => {
                let c = self.rc(*table).1;
                acc(*table, &mut |d| {
                    for (k, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            d[i * c + j] += g[k * c + j];
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |d| {
                    for i in 0..d.len() {
                        let v = xv[i];
                        let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        d[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let (r, dim) = node.value.rows_cols();
                let gv = self.value(*gain).data();
                acc(*gain, &mut |d| {
                    for row in 0..r {
                        for c in 0..dim {
                            d[c] += g[row * dim + c] * xhat[row * dim + c];
                        }
                    }
                });
                acc(*bias, &mut |d| {
                    for row in 0..r {
                        for c in 0..dim {
                            d[c] += g[row * dim + c];
                        }
                    }
                });
                acc(*x, &mut |d| {
                    let mut dxhat = vec![0.0; dim];
                    for row in 0..r {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for c in 0..dim {
                            dxhat[c] = g[row * dim + c] * gv[c];
                            m1 += dxhat[c];
                            m2 += dxhat[c] * xhat[row * dim + c];
                        }
                        m1 /= dim as f64;
                        m2 /= dim as f64;
                        for c in 0..dim {
                            d[row * dim + c] += rstd[row] * (dxhat[c] - m1 - xhat[row * dim + c] * m2);
                        }
                    }
                });
            }
            Op::MaskedSoftmax(x) => {
                let (r, c) = node.value.rows_cols();
                let y = node.value.data();
                acc(*x, &mut |d| {
                    for row in 0..r {
                        let ys = &y[row * c..(row + 1) * c];
                        let gs = &g[row * c..(row + 1) * c];
                        let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            // masked entries have y == 0 and so receive nothing
                            d[row * c + j] += ys[j] * (gs[j] - dot);
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                acc(*x, &mut |d| d.iter_mut().for_each(|v| *v += g[0] / n));
            }
            Op::PairLogits { intr, u, v, group } => {
                let (r, width) = node.value.rows_cols();
                let k = width - group;
                acc(*intr, &mut |d| {
                    for row in 0..r {
                        for c in 0..k {
                            d[row * k + c] += g[row * width + c];
                        }
                    }
                });
                acc(*u, &mut |d| {
                    for row in 0..r {
                        d[row] += g[row * width + k..(row + 1) * width].iter().sum::<f64>();
                    }
                });
                acc(*v, &mut |d| {
                    for row in 0..r {
                        let base = (row / group) * group;
                        for j in 0..*group {
                            d[base + j] += g[row * width + k + j];
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                let c = self.rc(*logits).1;
                let scale = g[0] / *count as f64;
                acc(*logits, &mut |d| {
                    for (row, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for j in 0..c {
                            d[row * c + j] += scale * probs[row * c + j];
                        }
                        d[row * c + t] -= scale;
                    }
                });
            }
        }
    }
}
