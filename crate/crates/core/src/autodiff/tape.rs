//! Recorded-operation reverse-mode differentiation.
//!
//! Ops are appended to a [`Tape`] in evaluation order, so the node list is
//! always topologically sorted and `backward` is a single reverse sweep.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Groups rows (directed edges) by the segment (center node) they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentIndex {
    ids: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl SegmentIndex {
    pub fn new(ids: Vec<usize>, count: usize) -> Result<Self> {
        let mut members = vec![Vec::new(); count];
        for (row, &id) in ids.iter().enumerate() {
            if id >= count {
                return Err(Error::SegmentOutOfRange { id, count });
            }
            members[id].push(row);
        }
        Ok(Self { ids, members })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn members(&self, segment: usize) -> &[usize] {
        &self.members[segment]
    }

    pub fn segment_count(&self) -> usize {
        self.members.len()
    }

    pub fn row_count(&self) -> usize {
        self.ids.len()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Concat(Vec<Var>),
    Scale(Var, f64),
    Mul(Var, Var),
    ScaleRows(Var, Var),
    RowSum(Var),
    LeakyRelu(Var, f64),
    Relu(Var),
    GatherRows(Var, Arc<[usize]>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SegmentSoftmax(Var, Arc<SegmentIndex>),
    SegmentSum(Var, Arc<SegmentIndex>),
    CrossEntropy(Var, usize),
    MeanRows(Var),
    SumAll(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradient buffers produced by [`Tape::backward`], one slot per node.
#[derive(Debug)]
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.slots.get(var.0).and_then(Option::as_ref)
    }
}

/// Named collection of tensors: model parameters, or gradients keyed the
/// same way.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Number of named tensors.
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let tensors = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let z = Tensor::new(t.shape().to_vec(), vec![0.0; t.len()]).expect("same shape");
                (k.clone(), z)
            })
            .collect();
        Self { tensors }
    }

    /// Elementwise `self += other`; names missing from `self` are an error.
    pub fn accumulate(&mut self, other: &ParamStore) -> Result<()> {
        for (name, t) in &other.tensors {
            let dst = self
                .tensors
                .get_mut(name)
                .ok_or_else(|| Error::MissingParam(name.clone()))?;
            if dst.shape() != t.shape() {
                return Err(Error::shape("accumulate", name.clone()));
            }
            dst.add_assign(t);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors.values_mut() {
            t.scale_in_place(factor);
        }
    }

    pub fn max_abs_diff(&self, other: &ParamStore) -> f64 {
        self.tensors
            .iter()
            .filter_map(|(k, t)| other.tensors.get(k).map(|o| t.max_abs_diff(o)))
            .fold(0.0, f64::max)
    }
}

/// A single-threaded recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Records non-trainable input data.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a trainable leaf whose gradient is reported by `param_grads`.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        let var = self.push(value, Op::Leaf, true);
        self.params.push((name.into(), var));
        var
    }

    /// Registers every tensor of `store` as a trainable leaf.
    pub fn params_from(&mut self, store: &ParamStore) -> BTreeMap<String, Var> {
        store
            .iter()
            .map(|(name, t)| (name.clone(), self.param(name.clone(), t.clone())))
            .collect()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn dims(&self, var: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = &self.nodes[var.0].value;
        if !t.is_matrix() {
            return Err(Error::shape(op, format!("expected rank 2, got {:?}", t.shape())));
        }
        Ok((t.rows(), t.cols()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a, "matmul")?;
        let (k2, n) = self.dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} * {k2}x{n}")));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::matrix(m, n, out)?;
        let ng = self.grad_of(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.grad_of(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(x, "add_bias")?;
        let (br, bc) = self.dims(bias, "add_bias")?;
        if br != 1 || bc != n {
            return Err(Error::shape("add_bias", format!("{m}x{n} + {br}x{bc}")));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        let value = Tensor::matrix(m, n, data)?;
        let ng = self.grad_of(&[x, bias]);
        Ok(self.push(value, Op::AddBias(x, bias), ng))
    }

    /// Concatenates along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let m = self.dims(parts[0], "concat")?.0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims(p, "concat")?;
            if r != m {
                return Err(Error::shape("concat", format!("row counts {m} vs {r}")));
            }
            total += c;
        }
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let value = Tensor::matrix(m, total, data)?;
        let ng = self.grad_of(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), ng))
    }

    pub fn scalar_mul(&mut self, x: Var, factor: f64) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let ng = self.grad_of(&[x]);
        Ok(self.push(value, Op::Scale(x, factor), ng))
    }

    /// Elementwise product of equal-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.grad_of(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    /// Multiplies row `i` of `x` (`m x n`) by `s[i]` (`s` is `m x 1`).
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (m, n) = self.dims(x, "scale_rows")?;
        let (sm, sn) = self.dims(s, "scale_rows")?;
        if sm != m || sn != 1 {
            return Err(Error::shape("scale_rows", format!("{m}x{n} by {sm}x{sn}")));
        }
        let sv = self.value(s).data();
        let mut data = self.value(x).data().to_vec();
        for (row, f) in data.chunks_mut(n.max(1)).zip(sv) {
            for v in row {
                *v *= f;
            }
        }
        let value = Tensor::matrix(m, n, data)?;
        let ng = self.grad_of(&[x, s]);
        Ok(self.push(value, Op::ScaleRows(x, s), ng))
    }

    /// Sums each row: `m x n -> m x 1`.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x, "row_sum")?;
        let data = if n == 0 {
            vec![0.0; m]
        } else {
            self.value(x).data().chunks(n).map(|r| r.iter().sum()).collect()
        };
        let value = Tensor::matrix(m, 1, data)?;
        let ng = self.grad_of(&[x]);
        Ok(self.push(value, Op::RowSum(x), ng))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let t = self.value(x);
        let data = t
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let ng = self.grad_of(&[x]);
        Ok(self.push(value, Op::LeakyRelu(x, slope), ng))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let ng = self.grad_of(&[x]);
        Ok(self.push(value, Op::Relu(x), ng))
    }

    /// Row gather: output row `r` is row `index[r]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        let (rows, cols) = self.dims(x, "gather_rows")?;
        let src = self.value(x);
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            if i >= rows {
                return Err(Error::IndexOutOfRange { index: i, len: rows });
            }
            data.extend_from_slice(src.row_slice(i));
        }
        let value = Tensor::matrix(index.len(), cols, data)?;
        let ng = self.grad_of(&[x]);
        Ok(self.push(value, Op::GatherRows(x, index), ng))
    }

    /// Embedding table lookup; same as a row gather.
    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        self.gather_rows(table, indices.into())
    }

    /// Row-wise layer normalization with learned scale and shift (`1 x n`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (m, n) = self.dims(x, "layer_norm")?;
        for p in [gamma, beta] {
            let (r, c) = self.dims(p, "layer_norm")?;
            if r != 1 || c != n {
                return Err(Error::shape("layer_norm", format!("affine {r}x{c} for width {n}")));
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut normalized = Vec::with_capacity(m * n);
        let mut inv_std = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * n);
        for row in self.value(x).data().chunks(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let xh = (v - mean) * is;
                normalized.push(xh);
                out.push(xh * g[j] + b[j]);
            }
        }
        let value = Tensor::matrix(m, n, out)?;
        let ng = self.grad_of(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            ng,
        ))
    }

    /// Softmax over the rows of each segment, independently per column.
    pub fn segment_softmax(&mut self, logits: Var, seg: Arc<SegmentIndex>) -> Result<Var> {
        let (m, n) = self.dims(logits, "segment_softmax")?;
        if seg.row_count() != m {
            return Err(Error::shape(
                "segment_softmax",
                format!("{m} rows but segment index covers {}", seg.row_count()),
            ));
        }
        let x = self.value(logits).data();
        let mut out = vec![0.0; m * n];
        for s in 0..seg.segment_count() {
            let members = seg.members(s);
            if members.is_empty() {
                continue;
            }
            for c in 0..n {
                let max = members
                    .iter()
                    .map(|&r| x[r * n + c])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for &r in members {
                    let e = (x[r * n + c] - max).exp();
                    out[r * n + c] = e;
                    total += e;
                }
                for &r in members {
                    out[r * n + c] /= total;
                }
            }
        }
        let value = Tensor::matrix(m, n, out)?;
        let ng = self.grad_of(&[logits]);
        Ok(self.push(value, Op::SegmentSoftmax(logits, seg), ng))
    }

    /// Sums the rows of each segment: `E x d -> S x d`.
    pub fn segment_sum(&mut self, values: Var, seg: Arc<SegmentIndex>) -> Result<Var> {
        let (m, n) = self.dims(values, "segment_sum")?;
        if seg.row_count() != m {
            return Err(Error::shape(
                "segment_sum",
                format!("{m} rows but segment index covers {}", seg.row_count()),
            ));
        }
        let x = self.value(values);
        let mut out = vec![0.0; seg.segment_count() * n];
        for s in 0..seg.segment_count() {
            let dst = &mut out[s * n..(s + 1) * n];
            for &r in seg.members(s) {
                for (d, v) in dst.iter_mut().zip(x.row_slice(r)) {
                    *d += v;
                }
            }
        }
        let value = Tensor::matrix(seg.segment_count(), n, out)?;
        let ng = self.grad_of(&[values]);
        Ok(self.push(value, Op::SegmentSum(values, seg), ng))
    }

    /// Softmax cross-entropy of a `1 x C` logit row against `label`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let (r, c) = self.dims(logits, "cross_entropy")?;
        if r != 1 {
            return Err(Error::shape("cross_entropy", format!("expected 1 x C, got {r}x{c}")));
        }
        if label >= c {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        let z = self.value(logits).data();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let value = Tensor::scalar(lse - z[label]);
        let ng = self.grad_of(&[logits]);
        Ok(self.push(value, Op::CrossEntropy(logits, label), ng))
    }

    /// Column means: `m x n -> 1 x n`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x, "mean_rows")?;
        if m == 0 {
            return Err(Error::shape("mean_rows", "no rows"));
        }
        let mut out = vec![0.0; n];
        for row in self.value(x).data().chunks(n.max(1)) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        let ng = self.grad_of(&[x]);
        Ok(self.push(Tensor::row(out), Op::MeanRows(x), ng))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        let ng = self.grad_of(&[x]);
        Ok(self.push(value, Op::SumAll(x), ng))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut slots: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        slots[loss.0] = Some(Tensor::new(lt.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = slots[idx].take() else { continue };
            self.propagate(node, &g, &mut slots)?;
            slots[idx] = Some(g);
        }
        Ok(Gradients { slots })
    }

    fn accumulate(&self, slots: &mut [Option<Tensor>], var: Var, delta: Tensor) {
        if !self.nodes[var.0].needs_grad {
            return;
        }
        match &mut slots[var.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, slots: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.nodes[a.0].needs_grad {
                    let da = matmul_nt(gd, tb.data(), m, n, k);
                    self.accumulate(slots, *a, Tensor::matrix(m, k, da)?);
                }
                if self.nodes[b.0].needs_grad {
                    let db = matmul_tn(ta.data(), gd, m, k, n);
                    self.accumulate(slots, *b, Tensor::matrix(k, n, db)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(slots, *a, g.clone());
                self.accumulate(slots, *b, g.clone());
            }
            Op::AddBias(x, bias) => {
                self.accumulate(slots, *x, g.clone());
                let n = g.cols();
                let mut db = vec![0.0; n];
                for row in gd.chunks(n.max(1)) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                self.accumulate(slots, *bias, Tensor::row(db));
            }
            Op::Concat(parts) => {
                let m = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.nodes[p.0].needs_grad {
                        let mut part = Vec::with_capacity(m * c);
                        for i in 0..m {
                            part.extend_from_slice(&g.row_slice(i)[offset..offset + c]);
                        }
                        self.accumulate(slots, p, Tensor::matrix(m, c, part)?);
                    }
                    offset += c;
                }
            }
            Op::Scale(x, f) => {
                let data = gd.iter().map(|v| v * f).collect();
                self.accumulate(slots, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = gd.iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                let db = gd.iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                self.accumulate(slots, *a, Tensor::new(g.shape().to_vec(), da)?);
                self.accumulate(slots, *b, Tensor::new(g.shape().to_vec(), db)?);
            }
            Op::ScaleRows(x, s) => {
                let (tx, ts) = (self.value(*x), self.value(*s));
                let n = tx.cols();
                if self.nodes[x.0].needs_grad {
                    let mut dx = gd.to_vec();
                    for (row, f) in dx.chunks_mut(n.max(1)).zip(ts.data()) {
                        for v in row {
                            *v *= f;
                        }
                    }
                    self.accumulate(slots, *x, Tensor::matrix(tx.rows(), n, dx)?);
                }
                if self.nodes[s.0].needs_grad {
                    let ds = (0..tx.rows())
                        .map(|i| {
                            g.row_slice(i)
                                .iter()
                                .zip(tx.row_slice(i))
                                .map(|(a, b)| a * b)
                                .sum()
                        })
                        .collect();
                    self.accumulate(slots, *s, Tensor::matrix(tx.rows(), 1, ds)?);
                }
            }
            Op::RowSum(x) => {
                let tx = self.value(*x);
                let n = tx.cols();
                let mut dx = Vec::with_capacity(tx.len());
                for &gi in gd {
                    dx.extend(std::iter::repeat_n(gi, n));
                }
                self.accumulate(slots, *x, Tensor::matrix(tx.rows(), n, dx)?);
            }
            Op::LeakyRelu(x, slope) => {
                let tx = self.value(*x);
                let dx = gd
                    .iter()
                    .zip(tx.data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { gv * slope })
                    .collect();
                self.accumulate(slots, *x, Tensor::new(tx.shape().to_vec(), dx)?);
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                let dx = gd
                    .iter()
                    .zip(tx.data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate(slots, *x, Tensor::new(tx.shape().to_vec(), dx)?);
            }
            Op::GatherRows(x, index) => {
                let tx = self.value(*x);
                let mut dx = Tensor::zeros(tx.rows(), tx.cols());
                for (r, &src) in index.iter().enumerate() {
                    let grow = g.row_slice(r);
                    for (d, v) in dx.row_slice_mut(src).iter_mut().zip(grow) {
                        *d += v;
                    }
                }
                self.accumulate(slots, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let gam = self.value(*gamma).data();
                let (m, n) = (g.rows(), g.cols());
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let grow = &gd[i * n..(i + 1) * n];
                    let xh = &normalized[i * n..(i + 1) * n];
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for j in 0..n {
                        dgamma[j] += grow[j] * xh[j];
                        dbeta[j] += grow[j];
                        let gh = grow[j] * gam[j];
                        sum_g += gh;
                        sum_gx += gh * xh[j];
                    }
                    let scale = inv_std[i] / n as f64;
                    for j in 0..n {
                        let gh = grow[j] * gam[j];
                        dx[i * n + j] = scale * (n as f64 * gh - sum_g - xh[j] * sum_gx);
                    }
                }
                self.accumulate(slots, *x, Tensor::matrix(m, n, dx)?);
                self.accumulate(slots, *gamma, Tensor::row(dgamma));
                self.accumulate(slots, *beta, Tensor::row(dbeta));
            }
            Op::SegmentSoftmax(x, seg) => {
                let y = node.value.data();
                let n = node.value.cols();
                let mut dx = vec![0.0; y.len()];
                for s in 0..seg.segment_count() {
                    let members = seg.members(s);
                    for c in 0..n {
                        let dot: f64 = members.iter().map(|&r| y[r * n + c] * gd[r * n + c]).sum();
                        for &r in members {
                            dx[r * n + c] = y[r * n + c] * (gd[r * n + c] - dot);
                        }
                    }
                }
                self.accumulate(slots, *x, Tensor::new(node.value.shape().to_vec(), dx)?);
            }
            Op::SegmentSum(x, seg) => {
                let tx = self.value(*x);
                let n = tx.cols();
                let mut dx = Vec::with_capacity(tx.len());
                for &s in seg.ids() {
                    dx.extend_from_slice(g.row_slice(s));
                }
                self.accumulate(slots, *x, Tensor::matrix(tx.rows(), n, dx)?);
            }
            Op::CrossEntropy(x, label) => {
                let z = self.value(*x).data();
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                let upstream = gd[0];
                let dz = exps
                    .iter()
                    .enumerate()
                    .map(|(i, e)| upstream * (e / total - if i == *label { 1.0 } else { 0.0 }))
                    .collect();
                self.accumulate(slots, *x, Tensor::row(dz));
            }
            Op::MeanRows(x) => {
                let tx = self.value(*x);
                let m = tx.rows();
                let mut dx = Vec::with_capacity(tx.len());
                for _ in 0..m {
                    dx.extend(gd.iter().map(|v| v / m as f64));
                }
                self.accumulate(slots, *x, Tensor::matrix(m, tx.cols(), dx)?);
            }
            Op::SumAll(x) => {
                let tx = self.value(*x);
                let dx = vec![gd[0]; tx.len()];
                self.accumulate(slots, *x, Tensor::new(tx.shape().to_vec(), dx)?);
            }
        }
        Ok(())
    }

    /// Collects gradients of every registered parameter, zero-filled where
    /// the loss does not depend on it.
    pub fn param_grads(&self, grads: &Gradients) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, var) in &self.params {
            let value = self.value(*var);
            let g = grads.get(*var).cloned().unwrap_or_else(|| {
                Tensor::new(value.shape().to_vec(), vec![0.0; value.len()]).expect("shape")
            });
            out.insert(name.clone(), g);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(ids: &[usize], count: usize) -> Arc<SegmentIndex> {
        Arc::new(SegmentIndex::new(ids.to_vec(), count).unwrap())
    }

    #[test]
    fn uniform_logits_give_uniform_weights() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(3, 1, vec![0.7; 3]).unwrap());
        let y = tape.segment_softmax(x, seg(&[0, 0, 0], 1)).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_of_zero_and_ln2() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 1, vec![0.0, 2f64.ln()]).unwrap());
        let y = tape.segment_softmax(x, seg(&[0, 0], 1)).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((d[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn segment_out_of_range_rejected() {
        assert!(matches!(
            SegmentIndex::new(vec![0, 2], 2),
            Err(Error::SegmentOutOfRange { id: 2, count: 2 })
        ));
    }

    #[test]
    fn leaky_relu_negative_side() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![-1.0, 2.0]));
        let y = tape.leaky_relu(x, 0.2).unwrap();
        assert_eq!(tape.value(y).data(), &[-0.2, 2.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn linear_map_gradient_is_input_broadcast() {
        // loss = sum(x W) with x fixed: dloss/dW[p][j] = x[p]
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![1.0, -2.0, 0.5]));
        let w = tape.param("w", Tensor::matrix(3, 2, vec![0.3; 6]).unwrap());
        let y = tape.matmul(x, w).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gw = grads.get(w).unwrap();
        assert_eq!(gw.data(), &[1.0, 1.0, -2.0, -2.0, 0.5, 0.5]);
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.param("a", Tensor::scalar(2.0));
        let _b = tape.param("b", Tensor::scalar(3.0));
        let y = tape.mul(a, a).unwrap();
        let grads = tape.backward(y).unwrap();
        let pg = tape.param_grads(&grads);
        assert_eq!(pg.get("a").unwrap().data(), &[4.0]);
        assert_eq!(pg.get("b").unwrap().data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let a = tape.param("a", Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(a), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn softmax_backward_is_shift_invariant() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::matrix(5, 1, vec![0.1, -0.4, 2.0, 0.3, 1.1]).unwrap());
        let s = seg(&[0, 1, 0, 1, 1], 2);
        let y = tape.segment_softmax(x, s.clone()).unwrap();
        let w = tape.constant(Tensor::matrix(5, 1, vec![1.5, -2.0, 0.7, 3.0, 0.2]).unwrap());
        let p = tape.mul(y, w).unwrap();
        let loss = tape.sum(p).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gx = grads.get(x).unwrap().data();
        for segment in 0..2 {
            let total: f64 = s.members(segment).iter().map(|&r| gx[r]).sum();
            assert!(total.abs() < 1e-10, "segment {segment}: {total}");
        }
    }
}
