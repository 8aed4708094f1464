//! Reverse-mode differentiation over dense tensors.
//!
//! Every primitive appends one node to the [`Tape`]; node inputs always have
//! smaller indices than the node itself, so a single reverse sweep visits
//! each op exactly once in a valid order.

use std::sync::Arc;

use super::rng::counter_uniform;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Keys the counter-based dropout stream: the same key always draws the
/// same mask, independent of evaluation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DropoutKey {
    pub seed: u64,
    pub step: u64,
    pub site: u64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    RowSum(Var),
    ScaleRows(Var, Var),
    Gather(Var, Arc<[usize]>),
    ScatterAdd(Var, Arc<[usize]>),
    SegmentSoftmax(Var, Arc<[usize]>),
    SoftmaxRows(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    Dropout(Var, Vec<f64>),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        items: Vec<(usize, usize)>,
        weight: f64,
        probs: Vec<f64>,
    },
    BceLogits {
        logits: Var,
        items: Vec<(usize, f64)>,
        weight: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Recording of executed primitives plus persistent gradient buffers.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    training: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

// Kernels over raw row-major slices.

fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[m×n] += a[m×k] · b[n×k]ᵀ
fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// out[k×n] += a[m×k]ᵀ · b[m×n]
fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Tape in training mode: dropout is active.
    pub fn training() -> Self {
        Tape {
            training: true,
            ..Tape::default()
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient; `Some` exactly for `requires_grad` values once
    /// a backward pass has run.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn require_2d(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            [_, _] => Ok(self.dims(v)),
            s => Err(Error::dim(op, s, &[0, 0])),
        }
    }

    /// a[m×k] · b[k×n]
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.require_2d("matmul", a)?;
        let (k2, n) = self.require_2d("matmul", b)?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        mm(self.data(a), self.data(b), m, k, n, &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// x[m×k] · w[n×k]ᵀ, the usual `W·h` applied to every row of `x`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (m, k) = self.require_2d("linear", x)?;
        let (n, k2) = self.require_2d("linear", w)?;
        if k != k2 {
            return Err(Error::dim("linear", self.shape(x), self.shape(w)));
        }
        let mut out = vec![0.0; m * n];
        mm_nt(self.data(x), self.data(w), m, k, n, &mut out);
        let rg = self.rg(&[x, w]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::Linear(x, w), rg))
    }

    /// Adds a length-n bias to every row of x[m×n].
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.require_2d("add_bias", x)?;
        if self.shape(bias) != [n] {
            return Err(Error::dim("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.data(bias).to_vec();
        let mut out = self.data(x).to_vec();
        for i in 0..m {
            for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(&b) {
                *o += bv;
            }
        }
        let rg = self.rg(&[x, bias]);
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::AddBias(x, bias), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("add", self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.rg(&[a, b]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("mul", self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.rg(&[a, b]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out: Vec<f64> = self.data(x).iter().map(|v| v * c).collect();
        let rg = self.rg(&[x]);
        let shape = self.shape(x).to_vec();
        self.push(Tensor { shape, data: out }.checked(), Op::Scale(x, c), rg)
    }

    /// Sums each row of x[m×n] into an m×1 column.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.require_2d("row_sum", x)?;
        let d = self.data(x);
        let out: Vec<f64> = (0..m).map(|i| d[i * n..(i + 1) * n].iter().sum()).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![m, 1], out)?, Op::RowSum(x), rg))
    }

    /// Multiplies row i of x[m×n] by s[i], where s is m×1.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (m, n) = self.require_2d("scale_rows", x)?;
        if self.shape(s) != [m, 1] {
            return Err(Error::dim("scale_rows", self.shape(x), self.shape(s)));
        }
        let sv = self.data(s);
        let mut out = self.data(x).to_vec();
        for i in 0..m {
            for o in &mut out[i * n..(i + 1) * n] {
                *o *= sv[i];
            }
        }
        let rg = self.rg(&[x, s]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::ScaleRows(x, s), rg))
    }

    /// Row i of the output is row `idx[i]` of x.
    pub fn gather_rows(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var> {
        let (m, n) = self.require_2d("gather_rows", x)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::dim("gather_rows", self.shape(x), &[bad]));
        }
        let d = self.data(x);
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx.iter() {
            out.extend_from_slice(&d[i * n..(i + 1) * n]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![idx.len(), n], out)?, Op::Gather(x, idx), rg))
    }

    /// Segment sum: row i of x is added into output row `idx[i]`; rows with
    /// no contributor stay zero.
    pub fn scatter_add_rows(&mut self, x: Var, idx: Arc<[usize]>, out_rows: usize) -> Result<Var> {
        let (m, n) = self.require_2d("scatter_add_rows", x)?;
        if idx.len() != m {
            return Err(Error::dim("scatter_add_rows", self.shape(x), &[idx.len()]));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= out_rows) {
            return Err(Error::dim("scatter_add_rows", &[out_rows], &[bad]));
        }
        let d = self.data(x);
        let mut out = vec![0.0; out_rows * n];
        for (i, &dst) in idx.iter().enumerate() {
            for (o, v) in out[dst * n..(dst + 1) * n].iter_mut().zip(&d[i * n..(i + 1) * n]) {
                *o += v;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![out_rows, n], out)?, Op::ScatterAdd(x, idx), rg))
    }

    /// Softmax of the scalars x[E×1] within each segment `seg[e]`.
    pub fn segment_softmax(&mut self, x: Var, seg: Arc<[usize]>, segments: usize) -> Result<Var> {
        if self.shape(x) != [seg.len(), 1] {
            return Err(Error::dim("segment_softmax", self.shape(x), &[seg.len(), 1]));
        }
        let d = self.data(x);
        let mut max = vec![f64::NEG_INFINITY; segments];
        for (e, &s) in seg.iter().enumerate() {
            if s >= segments {
                return Err(Error::dim("segment_softmax", &[segments], &[s]));
            }
            max[s] = max[s].max(d[e]);
        }
        let mut out: Vec<f64> = seg.iter().enumerate().map(|(e, &s)| (d[e] - max[s]).exp()).collect();
        let mut total = vec![0.0; segments];
        for (e, &s) in seg.iter().enumerate() {
            total[s] += out[e];
        }
        for (e, &s) in seg.iter().enumerate() {
            out[e] /= total[s];
        }
        let rg = self.rg(&[x]);
        let n = seg.len();
        Ok(self.push(Tensor::new(vec![n, 1], out)?, Op::SegmentSoftmax(x, seg), rg))
    }

    /// Row-wise softmax. Masked-out entries (`mask[i] == false`) get weight
    /// exactly zero; a row with no valid entry is an error.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.require_2d("softmax_rows", x)?;
        if let Some(mask) = mask {
            if mask.len() != m * n {
                return Err(Error::dim("softmax_rows", &[m, n], &[mask.len()]));
            }
        }
        let d = self.data(x);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let valid = |j: usize| mask.is_none_or(|mk| mk[i * n + j]);
            let max = (0..n)
                .filter(|&j| valid(j))
                .map(|j| d[i * n + j])
                .fold(f64::NEG_INFINITY, f64::max);
            if !(0..n).any(valid) {
                return Err(Error::DegenerateRow {
                    op: "softmax_rows",
                    row: i,
                });
            }
            let mut total = 0.0;
            for j in (0..n).filter(|&j| valid(j)) {
                let e = (d[i * n + j] - max).exp();
                out[i * n + j] = e;
                total += e;
            }
            for j in (0..n).filter(|&j| valid(j)) {
                out[i * n + j] /= total;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::SoftmaxRows(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.data(x).iter().map(|&v| v.max(0.0)).collect();
        let rg = self.rg(&[x]);
        let shape = self.shape(x).to_vec();
        self.push(Tensor { shape, data: out }.checked(), Op::Relu(x), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out: Vec<f64> = self
            .data(x)
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let rg = self.rg(&[x]);
        let shape = self.shape(x).to_vec();
        self.push(Tensor { shape, data: out }.checked(), Op::LeakyRelu(x, slope), rg)
    }

    /// Normalizes each row of x over its last dimension, then applies the
    /// affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if n == 0 {
            return Err(Error::dim("layer_norm", self.shape(x), &[0]));
        }
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(Error::dim("layer_norm", self.shape(x), self.shape(gain)));
        }
        let d = self.data(x);
        let g = self.data(gain);
        let b = self.data(bias);
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &d[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                let xh = (row[j] - mean) * inv;
                xhat[i * n + j] = xh;
                out[i * n + j] = g[j] * xh + b[j];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat_cols of nothing".into()));
        };
        let m = self.require_2d("concat_cols", first)?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.require_2d("concat_cols", p)?;
            if r != m {
                return Err(Error::dim("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = vec![0.0; m * n];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let d = self.data(p);
            for i in 0..m {
                out[i * n + off..i * n + off + w].copy_from_slice(&d[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.require_2d("slice_cols", x)?;
        if start + len > n {
            return Err(Error::dim("slice_cols", self.shape(x), &[start, len]));
        }
        let d = self.data(x);
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&d[i * n + start..i * n + start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![m, len], out)?, Op::SliceCols(x, start), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Inverted dropout: surviving entries are scaled by 1/(1-p). Identity
    /// when the tape is not in training mode or p == 0.
    pub fn dropout(&mut self, x: Var, p: f64, key: DropoutKey) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config("dropout", format!("probability {p} outside [0, 1)")));
        }
        if !self.training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|i| {
                if counter_uniform(key.seed, key.step, key.site, i as u64) < p {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let out: Vec<f64> = self.data(x).iter().zip(&mask).map(|(v, k)| v * k).collect();
        let rg = self.rg(&[x]);
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Dropout(x, mask), rg))
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// `weight · Σ CE(logits[row], class)` over the listed (row, class) pairs.
    pub fn cross_entropy(&mut self, logits: Var, items: Vec<(usize, usize)>, weight: f64) -> Result<Var> {
        let (m, c) = self.require_2d("cross_entropy", logits)?;
        let d = self.data(logits);
        let mut probs = vec![0.0; items.len() * c];
        let mut loss = 0.0;
        for (k, &(row, class)) in items.iter().enumerate() {
            if row >= m || class >= c {
                return Err(Error::dim("cross_entropy", &[m, c], &[row, class]));
            }
            let z = &d[row * c..(row + 1) * c];
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - z[class];
            let p = &mut probs[k * c..(k + 1) * c];
            p.copy_from_slice(z);
            softmax_in_place(p);
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(weight * loss),
            Op::CrossEntropy {
                logits,
                items,
                weight,
                probs,
            },
            rg,
        ))
    }

    /// `weight · Σ BCE(σ(logit[row]), target)` in the numerically stable
    /// logit form.
    pub fn bce_with_logits(&mut self, logits: Var, items: Vec<(usize, f64)>, weight: f64) -> Result<Var> {
        let (m, c) = self.require_2d("bce_with_logits", logits)?;
        if c != 1 {
            return Err(Error::dim("bce_with_logits", self.shape(logits), &[m, 1]));
        }
        let d = self.data(logits);
        let mut loss = 0.0;
        for &(row, y) in &items {
            if row >= m {
                return Err(Error::dim("bce_with_logits", &[m, 1], &[row]));
            }
            let z = d[row];
            loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(weight * loss),
            Op::BceLogits {
                logits,
                items,
                weight,
            },
            rg,
        ))
    }

    /// Propagates d(loss)/d(·) to every `requires_grad` value reachable from
    /// `loss`, adding into any gradient left by earlier calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut g: Vec<Option<Vec<f64>>> = vec![None; n];
        if self.nodes[loss.0].requires_grad {
            g[loss.0] = Some(vec![1.0]);
        }
        for i in (0..n).rev() {
            let Some(gout) = g[i].take() else { continue };
            self.propagate(i, &gout, &mut g);
            let slot = &mut self.grads[i];
            match slot {
                Some(t) => {
                    for (a, b) in t.data_mut().iter_mut().zip(&gout) {
                        *a += b;
                    }
                }
                None => {
                    let shape = self.nodes[i].value.shape().to_vec();
                    *slot = Some(Tensor { shape, data: gout });
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, gout: &[f64], g: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        macro_rules! acc {
            ($v:expr) => {
                grad_slot(g, $v, nodes[$v.0].value.len())
            };
        }
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if wants(*a) {
                    mm_nt(gout, self.data(*b), m, n, k, acc!(*a));
                }
                if wants(*b) {
                    mm_tn(self.data(*a), gout, m, k, n, acc!(*b));
                }
            }
            Op::Linear(x, w) => {
                let (m, k) = self.dims(*x);
                let n = self.dims(*w).0;
                if wants(*x) {
                    mm(gout, self.data(*w), m, n, k, acc!(*x));
                }
                if wants(*w) {
                    mm_tn(gout, self.data(*x), m, n, k, acc!(*w));
                }
            }
            Op::AddBias(x, b) => {
                let (m, n) = self.dims(*x);
                if wants(*x) {
                    add_into(acc!(*x), gout);
                }
                if wants(*b) {
                    let gb = acc!(*b);
                    for r in 0..m {
                        add_into(gb, &gout[r * n..(r + 1) * n]);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        add_into(acc!(v), gout);
                    }
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bd = self.data(*b);
                    for (o, (go, bv)) in acc!(*a).iter_mut().zip(gout.iter().zip(bd)) {
                        *o += go * bv;
                    }
                }
                if wants(*b) {
                    let ad = self.data(*a);
                    for (o, (go, av)) in acc!(*b).iter_mut().zip(gout.iter().zip(ad)) {
                        *o += go * av;
                    }
                }
            }
            Op::Scale(x, c) => {
                if wants(*x) {
                    for (o, go) in acc!(*x).iter_mut().zip(gout) {
                        *o += go * c;
                    }
                }
            }
            Op::RowSum(x) => {
                if wants(*x) {
                    let (m, n) = self.dims(*x);
                    let gx = acc!(*x);
                    for r in 0..m {
                        for o in &mut gx[r * n..(r + 1) * n] {
                            *o += gout[r];
                        }
                    }
                }
            }
            Op::ScaleRows(x, s) => {
                let (m, n) = self.dims(*x);
                if wants(*x) {
                    let sv = self.data(*s);
                    let gx = acc!(*x);
                    for r in 0..m {
                        for c in 0..n {
                            gx[r * n + c] += gout[r * n + c] * sv[r];
                        }
                    }
                }
                if wants(*s) {
                    let xd = self.data(*x);
                    let gs = acc!(*s);
                    for r in 0..m {
                        gs[r] += (0..n).map(|c| gout[r * n + c] * xd[r * n + c]).sum::<f64>();
                    }
                }
            }
            Op::Gather(x, idx) => {
                if wants(*x) {
                    let n = self.dims(*x).1;
                    let gx = acc!(*x);
                    for (r, &src) in idx.iter().enumerate() {
                        add_into(&mut gx[src * n..(src + 1) * n], &gout[r * n..(r + 1) * n]);
                    }
                }
            }
            Op::ScatterAdd(x, idx) => {
                if wants(*x) {
                    let n = self.dims(*x).1;
                    let gx = acc!(*x);
                    for (r, &dst) in idx.iter().enumerate() {
                        add_into(&mut gx[r * n..(r + 1) * n], &gout[dst * n..(dst + 1) * n]);
                    }
                }
            }
            Op::SegmentSoftmax(x, seg) => {
                if wants(*x) {
                    let y = nodes[i].value.data();
                    let segments = seg.iter().copied().max().map_or(0, |s| s + 1);
                    let mut dot = vec![0.0; segments];
                    for (e, &s) in seg.iter().enumerate() {
                        dot[s] += y[e] * gout[e];
                    }
                    let gx = acc!(*x);
                    for (e, &s) in seg.iter().enumerate() {
                        gx[e] += y[e] * (gout[e] - dot[s]);
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                if wants(*x) {
                    let (m, n) = self.dims(*x);
                    let y = nodes[i].value.data();
                    let gx = acc!(*x);
                    for r in 0..m {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &gout[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            gx[r * n + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::Relu(x) => {
                if wants(*x) {
                    let xd = self.data(*x);
                    for (o, (go, xv)) in acc!(*x).iter_mut().zip(gout.iter().zip(xd)) {
                        if *xv > 0.0 {
                            *o += go;
                        }
                    }
                }
            }
            Op::LeakyRelu(x, slope) => {
                if wants(*x) {
                    let xd = self.data(*x);
                    for (o, (go, xv)) in acc!(*x).iter_mut().zip(gout.iter().zip(xd)) {
                        *o += if *xv > 0.0 { *go } else { slope * go };
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (m, n) = self.dims(*x);
                if wants(*gain) {
                    let gg = acc!(*gain);
                    for r in 0..m {
                        for c in 0..n {
                            gg[c] += gout[r * n + c] * xhat[r * n + c];
                        }
                    }
                }
                if wants(*bias) {
                    let gb = acc!(*bias);
                    for r in 0..m {
                        add_into(gb, &gout[r * n..(r + 1) * n]);
                    }
                }
                if wants(*x) {
                    let gd = self.data(*gain);
                    let nf = n as f64;
                    let gx = acc!(*x);
                    let mut dxhat = vec![0.0; n];
                    for r in 0..m {
                        for c in 0..n {
                            dxhat[c] = gout[r * n + c] * gd[c];
                        }
                        let xh = &xhat[r * n..(r + 1) * n];
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            gx[r * n + c] += inv_std[r] / nf * (nf * dxhat[c] - sum_d - xh[c] * sum_dx);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let m = self.dims(parts[0]).0;
                let total: usize = parts.iter().map(|p| self.dims(*p).1).sum();
                let mut off = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    if wants(p) {
                        let gp = acc!(p);
                        for r in 0..m {
                            add_into(&mut gp[r * w..(r + 1) * w], &gout[r * total + off..r * total + off + w]);
                        }
                    }
                    off += w;
                }
            }
            Op::SliceCols(x, start) => {
                if wants(*x) {
                    let (m, n) = self.dims(*x);
                    let len = nodes[i].value.cols();
                    let gx = acc!(*x);
                    for r in 0..m {
                        add_into(&mut gx[r * n + start..r * n + start + len], &gout[r * len..(r + 1) * len]);
                    }
                }
            }
            Op::Reshape(x) => {
                if wants(*x) {
                    add_into(acc!(*x), gout);
                }
            }
            Op::Dropout(x, mask) => {
                if wants(*x) {
                    for (o, (go, k)) in acc!(*x).iter_mut().zip(gout.iter().zip(mask)) {
                        *o += go * k;
                    }
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    for o in acc!(*x).iter_mut() {
                        *o += gout[0];
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                items,
                weight,
                probs,
            } => {
                if wants(*logits) {
                    let c = self.dims(*logits).1;
                    let gl = acc!(*logits);
                    let s = gout[0] * weight;
                    for (k, &(row, class)) in items.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == class { 1.0 } else { 0.0 };
                            gl[row * c + j] += s * (probs[k * c + j] - onehot);
                        }
                    }
                }
            }
            Op::BceLogits { logits, items, weight } => {
                if wants(*logits) {
                    let zd = self.data(*logits);
                    let s = gout[0] * weight;
                    let gl = acc!(*logits);
                    for &(row, y) in items {
                        gl[row] += s * (sigmoid(zd[row]) - y);
                    }
                }
            }
        }
    }
}

fn grad_slot(g: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    g[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Tensor {
    fn checked(self) -> Tensor {
        debug_assert_eq!(self.shape().iter().product::<usize>(), self.len());
        self
    }
}
