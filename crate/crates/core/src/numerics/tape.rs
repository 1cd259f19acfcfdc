//! Reverse-mode differentiation over a linear operation record.
//!
//! Nodes are appended in execution order, so replaying the record from the
//! back visits every node after all of its consumers.

use std::sync::Arc;

use super::array::Array;
use super::kernels;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable arrays. Gradients accumulate into each array's `grad`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    arrays: Vec<Array>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, array: Array) -> ParamId {
        self.names.push(name.into());
        self.arrays.push(array.with_grad());
        ParamId(self.arrays.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.arrays[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.arrays[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.arrays.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.names.iter().map(String::as_str).zip(&self.arrays)
    }

    pub fn arrays_mut(&mut self) -> &mut [Array] {
        &mut self.arrays
    }

    pub fn numel(&self) -> usize {
        self.arrays.iter().map(Array::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.arrays.iter_mut().for_each(Array::zero_grad);
    }

    /// L2 norm over all populated gradients.
    pub fn grad_norm(&self) -> f64 {
        self.arrays
            .iter()
            .filter_map(Array::grad)
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.arrays.iter().all(Array::all_finite)
    }
}

/// A contiguous run of rows forming one sequence, with its row-major
/// `len x len` visibility pattern (`true` = may attend).
#[derive(Clone, Debug)]
pub struct Segment {
    pub offset: usize,
    pub len: usize,
    pub visible: Arc<Vec<bool>>,
}

#[derive(Debug)]
enum Op {
    Leaf(Option<ParamId>),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    Softplus(Var),
    Gelu(Var),
    Relu(Var),
    UnitPhase(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        stats: Vec<(f64, f64)>,
    },
    SelectRows(Var, Vec<usize>),
    GatherMean(Var, Vec<Vec<usize>>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SumAll(Var),
    MeanAll(Var),
    SumCols(Var),
    RowL1(Var),
    RowL2(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        segments: Vec<Segment>,
        n_heads: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    needs_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn same_shape(a: &Array, b: &Array, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    /// Records a trainable leaf holding a copy of `params[id]`.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let src = params.get(id);
        let value = Array::from_parts(src.shape().to_vec(), src.data().to_vec());
        self.nodes.push(Node {
            value,
            op: Op::Leaf(Some(id)),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array) -> Var {
        let value = Array::from_parts(value.shape().to_vec(), value.into_data());
        self.nodes.push(Node {
            value,
            op: Op::Leaf(None),
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(Error::shape(format!("matmul inner dims {k} vs {k2}")));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        Ok(self.push(Array::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b]))
    }

    /// `a * b^T` for a `[m x k]` and b `[n x k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (n, k2) = self.dims(b)?;
        if k != k2 {
            return Err(Error::shape(format!("matmul_t inner dims {k} vs {k2}")));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_t(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        Ok(self.push(Array::from_parts(vec![m, n], out), Op::MatMulT(a, b), &[a, b]))
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Array> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(va, vb, what)?;
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(Array::from_parts(va.shape().to_vec(), data))
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Array {
        let va = self.value(a);
        Array::from_parts(va.shape().to_vec(), va.data().iter().map(|x| f(*x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "div", |x, y| x / y)?;
        Ok(self.push(out, Op::Div(a, b), &[a, b]))
    }

    /// Adds vector `b` (length n) to every row of `x` (m x n).
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        let vb = self.value(b);
        if vb.len() != n {
            return Err(Error::shape(format!("add_row: bias {} vs cols {n}", vb.len())));
        }
        let bias = vb.data();
        let mut out = self.value(x).data().to_vec();
        for i in 0..m {
            for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let shape = self.value(x).shape().to_vec();
        Ok(self.push(Array::from_parts(shape, out), Op::AddRow(x, b), &[x, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.map(x, |v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.map(x, |v| v + c);
        self.push(out, Op::AddScalar(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::abs);
        self.push(out, Op::Abs(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v * v);
        self.push(out, Op::Square(x), &[x])
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|v| *v < 0.0) {
            return Err(Error::contract("sqrt of a negative value"));
        }
        let out = self.map(x, f64::sqrt);
        Ok(self.push(out, Op::Sqrt(x), &[x]))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.map(x, kernels::softplus);
        self.push(out, Op::Softplus(x), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.map(x, kernels::gelu);
        self.push(out, Op::Gelu(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.max(0.0));
        self.push(out, Op::Relu(x), &[x])
    }

    /// Treats each row as complex numbers `(re | im)` split into halves and
    /// scales every entry to unit modulus. A zero entry maps to phase 0,
    /// i.e. `1 + 0i`, with zero gradient.
    pub fn unit_phase(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        if n % 2 != 0 {
            return Err(Error::contract(format!("unit_phase: odd width {n}")));
        }
        let k = n / 2;
        let xv = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for c in 0..k {
                let (a, b) = (xv[i * n + c], xv[i * n + k + c]);
                let r = a.hypot(b);
                let (u, v) = if r == 0.0 { (1.0, 0.0) } else { (a / r, b / r) };
                out[i * n + c] = u;
                out[i * n + k + c] = v;
            }
        }
        let shape = self.value(x).shape().to_vec();
        Ok(self.push(Array::from_parts(shape, out), Op::UnitPhase(x), &[x]))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        let mut out = self.value(x).data().to_vec();
        for i in 0..m {
            if !kernels::softmax_in_place(&mut out[i * n..(i + 1) * n]) {
                return Err(Error::contract(format!("softmax row {i} is entirely -inf")));
            }
        }
        let shape = self.value(x).shape().to_vec();
        Ok(self.push(Array::from_parts(shape, out), Op::SoftmaxRows(x), &[x]))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Error::shape("layer_norm: gain/bias length"));
        }
        let mut out = vec![0.0; m * n];
        let mut stats = Vec::with_capacity(m);
        {
            let (xv, g, b) = (self.value(x).data(), self.value(gain).data(), self.value(bias).data());
            for i in 0..m {
                stats.push(kernels::layer_norm_row(
                    &xv[i * n..(i + 1) * n],
                    g,
                    b,
                    &mut out[i * n..(i + 1) * n],
                ));
            }
        }
        let shape = self.value(x).shape().to_vec();
        Ok(self.push(
            Array::from_parts(shape, out),
            Op::LayerNorm { x, gain, bias, stats },
            &[x, gain, bias],
        ))
    }

    /// Gathers rows by index (embedding lookup); gradients scatter-add back.
    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &r in idx {
            if r >= m {
                return Err(Error::shape(format!("select_rows: row {r} out of {m}")));
            }
            out.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        Ok(self.push(
            Array::from_parts(vec![idx.len(), n], out),
            Op::SelectRows(x, idx.to_vec()),
            &[x],
        ))
    }

    /// Each output row is the mean of the listed input rows.
    pub fn gather_mean(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; groups.len() * n];
        for (g, rows) in groups.iter().enumerate() {
            if rows.is_empty() {
                return Err(Error::contract(format!("gather_mean: group {g} is empty")));
            }
            let orow = &mut out[g * n..(g + 1) * n];
            for &r in rows {
                if r >= m {
                    return Err(Error::shape(format!("gather_mean: row {r} out of {m}")));
                }
                orow.iter_mut().zip(&src[r * n..(r + 1) * n]).for_each(|(o, v)| *o += v);
            }
            let inv = 1.0 / rows.len() as f64;
            orow.iter_mut().for_each(|o| *o *= inv);
        }
        Ok(self.push(
            Array::from_parts(vec![groups.len(), n], out),
            Op::GatherMean(x, groups.to_vec()),
            &[x],
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        if start > end || end > n {
            return Err(Error::shape(format!("slice_cols {start}..{end} of {n}")));
        }
        let src = self.value(x).data();
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        Ok(self.push(Array::from_parts(vec![m, w], out), Op::SliceCols(x, start), &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.dims(*parts.first().ok_or_else(|| Error::shape("concat of nothing"))?)?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.dims(p)?;
            if pm != m {
                return Err(Error::shape("concat_cols: row counts differ"));
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
        Ok(self.push(
            Array::from_parts(vec![m, total], out),
            Op::ConcatCols(parts.to_vec()),
            parts,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.dims(*parts.first().ok_or_else(|| Error::shape("concat of nothing"))?)?.1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pm, pn) = self.dims(p)?;
            if pn != n {
                return Err(Error::shape("concat_rows: column counts differ"));
            }
            rows += pm;
            out.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(
            Array::from_parts(vec![rows, n], out),
            Op::ConcatRows(parts.to_vec()),
            parts,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Array::scalar(s), Op::SumAll(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(Error::contract("mean of an empty array"));
        }
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        Ok(self.push(Array::scalar(s), Op::MeanAll(x), &[x]))
    }

    /// Per-row sums: `[m x n] -> [m]`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        let src = self.value(x).data();
        let out = (0..m).map(|i| src[i * n..(i + 1) * n].iter().sum()).collect();
        Ok(self.push(Array::vector(out), Op::SumCols(x), &[x]))
    }

    /// Per-row L1 norms: `[m x n] -> [m]`. Subgradient of |0| is 0.
    pub fn row_l1(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        let src = self.value(x).data();
        let out = (0..m)
            .map(|i| src[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum())
            .collect();
        Ok(self.push(Array::vector(out), Op::RowL1(x), &[x]))
    }

    /// Per-row L2 norms: `[m x n] -> [m]`. Gradient at the zero row is 0.
    pub fn row_l2(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        let src = self.value(x).data();
        let out = (0..m)
            .map(|i| src[i * n..(i + 1) * n].iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Ok(self.push(Array::vector(out), Op::RowL2(x), &[x]))
    }

    /// Per-row negative log-likelihood of integer targets: `[m x V] -> [m]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(logits)?;
        if targets.len() != m {
            return Err(Error::shape(format!("cross_entropy: {} targets for {m} rows", targets.len())));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut out = Vec::with_capacity(m);
        for (i, &t) in targets.iter().enumerate() {
            if t >= n {
                return Err(Error::shape(format!("cross_entropy: target {t} out of {n}")));
            }
            let row = &self.value(logits).data()[i * n..(i + 1) * n];
            let lp = kernels::log_softmax(row);
            out.push(-lp[t]);
            for (p, l) in probs[i * n..(i + 1) * n].iter_mut().zip(&lp) {
                *p = l.exp();
            }
        }
        Ok(self.push(
            Array::vector(out),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Multi-head scaled dot-product attention over concatenated sequences.
    ///
    /// `q`, `k`, `v` are `[N x d]`; each segment covers its own rows and
    /// attends only within itself under its visibility pattern. Scores are
    /// scaled by `1/sqrt(d / n_heads)`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, segments: &[Segment], n_heads: usize) -> Result<Var> {
        let (rows, d) = self.dims(q)?;
        if self.dims(k)? != (rows, d) || self.dims(v)? != (rows, d) {
            return Err(Error::shape("attention: q/k/v shapes differ"));
        }
        if n_heads == 0 || d % n_heads != 0 {
            return Err(Error::shape(format!("attention: d={d} not divisible by {n_heads} heads")));
        }
        let dh = d / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = vec![0.0; rows * d];
        let total: usize = segments.iter().map(|s| n_heads * s.len * s.len).sum();
        let mut probs = vec![0.0; total];
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut base = 0;
        for seg in segments {
            let (off, len) = (seg.offset, seg.len);
            if off + len > rows || seg.visible.len() != len * len {
                return Err(Error::shape("attention: segment out of range"));
            }
            for i in 0..len {
                if !seg.visible[i * len..(i + 1) * len].iter().any(|&b| b) {
                    return Err(Error::contract(format!("attention: row {i} sees nothing")));
                }
            }
            let keys = &kd[off * d..(off + len) * d];
            let values = &vd[off * d..(off + len) * d];
            for h in 0..n_heads {
                let col0 = h * dh;
                for i in 0..len {
                    let r = off + i;
                    let p = &mut probs[base + (h * len + i) * len..base + (h * len + i + 1) * len];
                    kernels::attention_row(
                        &qd[r * d + col0..r * d + col0 + dh],
                        keys,
                        values,
                        d,
                        col0,
                        &seg.visible[i * len..(i + 1) * len],
                        scale,
                        p,
                        &mut out[r * d + col0..r * d + col0 + dh],
                    );
                }
            }
            base += n_heads * len * len;
        }
        Ok(self.push(
            Array::from_parts(vec![rows, d], out),
            Op::Attention {
                q,
                k,
                v,
                segments: segments.to_vec(),
                n_heads,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Attention probabilities recorded by an attention node, laid out per
    /// segment as `[head][row][col]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Propagates d(loss)/d(node) back through the record and accumulates
    /// gradients into every reachable parameter.
    pub fn backward(&self, loss: Var, params: &mut ParamSet) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf(Some(pid)) = node.op {
                params.get_mut(pid).accumulate_grad(&g);
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.wants(v) {
            return;
        }
        let slot = &mut grads[v.0];
        let buf = slot.get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(buf);
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let out = node.value.data();
        match &node.op {
            Op::Leaf(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a)?;
                let n = self.dims(*b)?.1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::matmul_t(g, bv, m, n, k, &mut da);
                    self.acc(grads, *a, |buf| add_into(buf, &da));
                }
                self.acc(grads, *b, |buf| kernels::matmul_tn_acc(av, g, m, k, n, buf));
            }
            Op::MatMulT(a, b) => {
                let (m, k) = self.dims(*a)?;
                let n = self.dims(*b)?.0;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::matmul(g, bv, m, n, k, &mut da);
                    self.acc(grads, *a, |buf| add_into(buf, &da));
                }
                self.acc(grads, *b, |buf| kernels::matmul_tn_acc(g, av, m, n, k, buf));
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |buf| add_into(buf, g));
                self.acc(grads, *b, |buf| add_into(buf, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |buf| add_into(buf, g));
                self.acc(grads, *b, |buf| buf.iter_mut().zip(g).for_each(|(o, gv)| *o -= gv));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * bv[i];
                    }
                });
                self.acc(grads, *b, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * av[i];
                    }
                });
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] / bv[i];
                    }
                });
                self.acc(grads, *b, |buf| {
                    for i in 0..buf.len() {
                        buf[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                    }
                });
            }
            Op::AddRow(x, b) => {
                let n = self.value(*b).len();
                self.acc(grads, *x, |buf| add_into(buf, g));
                self.acc(grads, *b, |buf| {
                    for row in g.chunks_exact(n) {
                        add_into(buf, row);
                    }
                });
            }
            Op::Scale(x, c) => {
                self.acc(grads, *x, |buf| buf.iter_mut().zip(g).for_each(|(o, gv)| *o += c * gv));
            }
            Op::AddScalar(x) => self.acc(grads, *x, |buf| add_into(buf, g)),
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * sign(xv[i]);
                    }
                });
            }
            Op::Square(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += 2.0 * xv[i] * g[i];
                    }
                });
            }
            Op::Sqrt(x) => {
                self.acc(grads, *x, |buf| {
                    for i in 0..buf.len() {
                        if out[i] > 0.0 {
                            buf[i] += 0.5 * g[i] / out[i];
                        }
                    }
                });
            }
            Op::Softplus(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * kernels::sigmoid(xv[i]);
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * kernels::gelu_grad(xv[i]);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |buf| {
                    for i in 0..buf.len() {
                        if xv[i] > 0.0 {
                            buf[i] += g[i];
                        }
                    }
                });
            }
            Op::UnitPhase(x) => {
                let (m, n) = self.dims(*x)?;
                let k = n / 2;
                let xv = self.value(*x).data();
                self.acc(grads, *x, |buf| {
                    for i in 0..m {
                        for c in 0..k {
                            let (ia, ib) = (i * n + c, i * n + k + c);
                            let (a, b) = (xv[ia], xv[ib]);
                            let r = a.hypot(b);
                            if r == 0.0 {
                                continue;
                            }
                            let r3 = r * r * r;
                            let (gu, gv) = (g[ia], g[ib]);
                            buf[ia] += b * (gu * b - gv * a) / r3;
                            buf[ib] += a * (gv * a - gu * b) / r3;
                        }
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let (_, n) = self.dims(*x)?;
                self.acc(grads, *x, |buf| {
                    for ((brow, grow), prow) in buf.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(out.chunks_exact(n)) {
                        let c: f64 = grow.iter().zip(prow).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            brow[j] += prow[j] * (grow[j] - c);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, stats } => {
                let (m, n) = self.dims(*x)?;
                let xv = self.value(*x).data();
                let gv = self.value(*gain).data();
                let xhat = |i: usize, j: usize| (xv[i * n + j] - stats[i].0) * stats[i].1;
                self.acc(grads, *gain, |buf| {
                    for i in 0..m {
                        for j in 0..n {
                            buf[j] += g[i * n + j] * xhat(i, j);
                        }
                    }
                });
                self.acc(grads, *bias, |buf| {
                    for row in g.chunks_exact(n) {
                        add_into(buf, row);
                    }
                });
                self.acc(grads, *x, |buf| {
                    let inv_n = 1.0 / n as f64;
                    for i in 0..m {
                        let rstd = stats[i].1;
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..n {
                            let d = g[i * n + j] * gv[j];
                            mean_d += d;
                            mean_dx += d * xhat(i, j);
                        }
                        mean_d *= inv_n;
                        mean_dx *= inv_n;
                        for j in 0..n {
                            let d = g[i * n + j] * gv[j];
                            buf[i * n + j] += rstd * (d - mean_d - xhat(i, j) * mean_dx);
                        }
                    }
                });
            }
            Op::SelectRows(x, idx) => {
                let n = self.dims(*x)?.1;
                self.acc(grads, *x, |buf| {
                    for (r, &src) in idx.iter().enumerate() {
                        add_into(&mut buf[src * n..(src + 1) * n], &g[r * n..(r + 1) * n]);
                    }
                });
            }
            Op::GatherMean(x, groups) => {
                let n = self.dims(*x)?.1;
                self.acc(grads, *x, |buf| {
                    for (r, rows) in groups.iter().enumerate() {
                        let inv = 1.0 / rows.len() as f64;
                        for &src in rows {
                            for j in 0..n {
                                buf[src * n + j] += inv * g[r * n + j];
                            }
                        }
                    }
                });
            }
            Op::SliceCols(x, start) => {
                let (m, n) = self.dims(*x)?;
                let w = node.value.dims2()?.1;
                self.acc(grads, *x, |buf| {
                    for i in 0..m {
                        add_into(&mut buf[i * n + start..i * n + start + w], &g[i * w..(i + 1) * w]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (m, total) = node.value.dims2()?;
                let mut col = 0;
                for &p in parts {
                    let w = self.dims(p)?.1;
                    self.acc(grads, p, |buf| {
                        for i in 0..m {
                            add_into(&mut buf[i * w..(i + 1) * w], &g[i * total + col..i * total + col + w]);
                        }
                    });
                    col += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.acc(grads, p, |buf| add_into(buf, &g[start..start + len]));
                    start += len;
                }
            }
            Op::SumAll(x) => {
                self.acc(grads, *x, |buf| buf.iter_mut().for_each(|o| *o += g[0]));
            }
            Op::MeanAll(x) => {
                let n = self.value(*x).len() as f64;
                self.acc(grads, *x, |buf| buf.iter_mut().for_each(|o| *o += g[0] / n));
            }
            Op::SumCols(x) => {
                let n = self.dims(*x)?.1;
                self.acc(grads, *x, |buf| {
                    for (i, row) in buf.chunks_exact_mut(n).enumerate() {
                        row.iter_mut().for_each(|o| *o += g[i]);
                    }
                });
            }
            Op::RowL1(x) => {
                let n = self.dims(*x)?.1;
                let xv = self.value(*x).data();
                self.acc(grads, *x, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i / n] * sign(xv[i]);
                    }
                });
            }
            Op::RowL2(x) => {
                let n = self.dims(*x)?.1;
                let xv = self.value(*x).data();
                self.acc(grads, *x, |buf| {
                    for i in 0..buf.len() {
                        let norm = out[i / n];
                        if norm > 0.0 {
                            buf[i] += g[i / n] * xv[i] / norm;
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let n = self.dims(*logits)?.1;
                self.acc(grads, *logits, |buf| {
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..n {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            buf[i * n + j] += g[i] * (probs[i * n + j] - onehot);
                        }
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                segments,
                n_heads,
                probs,
            } => self.attention_backward(g, *q, *k, *v, segments, *n_heads, probs, grads)?,
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[f64],
        q: Var,
        k: Var,
        v: Var,
        segments: &[Segment],
        n_heads: usize,
        probs: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        let (rows, d) = self.dims(q)?;
        let dh = d / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut dq = vec![0.0; rows * d];
        let mut dk = vec![0.0; rows * d];
        let mut dv = vec![0.0; rows * d];
        let mut dp = Vec::new();
        let mut base = 0;
        for seg in segments {
            let (off, len) = (seg.offset, seg.len);
            dp.resize(len, 0.0);
            for h in 0..n_heads {
                let col0 = h * dh;
                for i in 0..len {
                    let r = off + i;
                    let p = &probs[base + (h * len + i) * len..base + (h * len + i + 1) * len];
                    let gi = &g[r * d + col0..r * d + col0 + dh];
                    let mut c = 0.0;
                    for j in 0..len {
                        if p[j] == 0.0 {
                            dp[j] = 0.0;
                            continue;
                        }
                        let vj = (off + j) * d + col0;
                        dp[j] = kernels::dot(gi, &vd[vj..vj + dh]);
                        c += p[j] * dp[j];
                        for t in 0..dh {
                            dv[vj + t] += p[j] * gi[t];
                        }
                    }
                    let qi = r * d + col0;
                    for j in 0..len {
                        if p[j] == 0.0 {
                            continue;
                        }
                        let ds = p[j] * (dp[j] - c) * scale;
                        let kj = (off + j) * d + col0;
                        for t in 0..dh {
                            dq[qi + t] += ds * kd[kj + t];
                            dk[kj + t] += ds * qd[qi + t];
                        }
                    }
                }
            }
            base += n_heads * len * len;
        }
        self.acc(grads, q, |buf| add_into(buf, &dq));
        self.acc(grads, k, |buf| add_into(buf, &dk));
        self.acc(grads, v, |buf| add_into(buf, &dv));
        Ok(())
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
