//! Tensor-level reverse-mode automatic differentiation.
//!
//! A [`Tape`] owns every intermediate value. Operations append a node that
//! records its inputs plus whatever it needs for the reverse sweep; nodes
//! are therefore always in topological order. [`Tape::backward`] walks the
//! nodes once, in reverse, and accumulates gradients for every node that
//! depends on a tracked parameter. Constants never receive gradients.
//!
//! Most operations view their operands as matrices: the trailing axis is the
//! column count and everything before it is flattened into rows. The
//! convolution and normalisation operations used by the convolutional model
//! work on `[batch, maps, time]` arrays instead.

use crate::error::{Error, Result};
use crate::numerics::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Floor applied to probabilities before the logarithm in cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Elu(Var),
    Relu(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Slice { src: Var, r0: usize, c0: usize },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    MeanGroups(Var, usize),
    SumSquares(Var),
    CrossEntropy { probs: Var, labels: Vec<usize> },
    MaskMul { src: Var, mask: Vec<f64> },
    LstmCell { z: Var, c_prev: Var, gates: Vec<f64>, tanh_c: Vec<f64> },
    GruCell { xp: Var, hp: Var, h_prev: Var, gates: Vec<f64> },
    ConvTime { x: Var, w: Var, routes: Vec<(usize, usize)> },
    MixMaps { x: Var, w: Var, groups: usize },
    BatchNorm(Box<BatchNormSaved>),
    AvgPoolTime { x: Var, pool: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
}

#[derive(Debug)]
struct BatchNormSaved {
    x: Var,
    gamma: Var,
    beta: Var,
    groups: usize,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Statistics to normalise with when a batch-norm node is built.
#[derive(Debug, Clone, Copy)]
pub enum NormStats<'a> {
    /// Use the current batch; the per-group mean and unbiased variance are
    /// retained on the node for running-average updates.
    Batch,
    /// Use fixed running statistics.
    Running { mean: &'a [f64], var: &'a [f64] },
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one reverse sweep, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [b, m, n] => Ok((*b, *m, *n)),
        s => Err(Error::Shape(format!("{what} expects [batch, maps, time], got {s:?}"))),
    }
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

    /// Untracked input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, tracked: false });
        Var(self.nodes.len() - 1)
    }

    /// Tracked leaf; receives a gradient on [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, tracked: true });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Batch mean and unbiased variance recorded by a batch-statistics norm node.
    pub fn batch_stats(&self, v: Var) -> Option<(&[f64], &[f64])> {
        match &self.nodes[v.0].op {
            Op::BatchNorm(s) => s.batch_stats.as_ref().map(|(m, v)| (m.as_slice(), v.as_slice())),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn v(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.v(a), self.v(b));
        let (m, k) = (ta.rows(), ta.cols());
        if tb.shape().len() != 2 || tb.shape()[0] != k {
            return Err(Error::Shape(format!(
                "matmul: {:?} × {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let n = tb.cols();
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, false);
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.v(a);
        let (r, c) = (t.rows(), t.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.data()[i * c + j];
            }
        }
        let value = Tensor::matrix(c, r, out)?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        same_shape(self.v(a), self.v(b), what)?;
        let data = self.v(a).data().iter().zip(self.v(b).data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(self.v(a).shape().to_vec(), data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.v(a), self.v(bias));
        let c = ta.cols();
        if tb.len() != c {
            return Err(Error::Shape(format!("add_row: {c} columns vs bias of {}", tb.len())));
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_exact_mut(c.max(1)) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddRow(a, bias), &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.v(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * s).collect()).unwrap();
        self.push(value, Op::Scale(a, s), &[a])
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.v(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect()).unwrap();
        self.push(value, op, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > 0.0 { x } else { x.exp_m1() }, Op::Elu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.v(a);
        let c = t.cols();
        if c == 0 {
            return Err(Error::Parameter("softmax over an empty axis".into()));
        }
        let mut data = t.data().to_vec();
        for row in data.chunks_exact_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(value, Op::SoftmaxRows(a), &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let r = self.v(*first).rows();
        let mut total = 0;
        for &p in parts {
            if self.v(p).rows() != r {
                return Err(Error::Shape("concat_cols: row counts differ".into()));
            }
            total += self.v(p).cols();
        }
        let mut data = vec![0.0; r * total];
        let mut off = 0;
        for &p in parts {
            let t = self.v(p);
            let c = t.cols();
            for i in 0..r {
                data[i * total + off..i * total + off + c].copy_from_slice(&t.data()[i * c..(i + 1) * c]);
            }
            off += c;
        }
        let value = Tensor::matrix(r, total, data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let c = self.v(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.v(p);
            if t.cols() != c {
                return Err(Error::Shape("concat_rows: column counts differ".into()));
            }
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let value = Tensor::matrix(rows, c, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Sub-matrix `[r0, r1) × [c0, c1)`.
    pub fn slice(&mut self, a: Var, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Result<Var> {
        let t = self.v(a);
        let (r, c) = (t.rows(), t.cols());
        if rows.end > r || cols.end > c || rows.start > rows.end || cols.start > cols.end {
            return Err(Error::Shape(format!(
                "slice {rows:?}×{cols:?} outside {r}×{c}"
            )));
        }
        let w = cols.end - cols.start;
        let mut data = Vec::with_capacity(rows.len() * w);
        for i in rows.clone() {
            data.extend_from_slice(&t.data()[i * c + cols.start..i * c + cols.end]);
        }
        let value = Tensor::matrix(rows.len(), w, data)?;
        Ok(self.push(value, Op::Slice { src: a, r0: rows.start, c0: cols.start }, &[a]))
    }

    pub fn slice_rows(&mut self, a: Var, rows: std::ops::Range<usize>) -> Result<Var> {
        let c = self.v(a).cols();
        self.slice(a, rows, 0..c)
    }

    pub fn slice_cols(&mut self, a: Var, cols: std::ops::Range<usize>) -> Result<Var> {
        let r = self.v(a).rows();
        self.slice(a, 0..r, cols)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.v(a).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.v(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.v(a);
        if t.is_empty() {
            return Err(Error::Parameter("mean of an empty tensor".into()));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mean(a), &[a]))
    }

    /// Averages consecutive blocks of `group` rows: `(B·group)×D → B×D`.
    pub fn mean_groups(&mut self, a: Var, group: usize) -> Result<Var> {
        let t = self.v(a);
        let (r, c) = (t.rows(), t.cols());
        if group == 0 || r % group != 0 {
            return Err(Error::Shape(format!("mean_groups: {r} rows not divisible by {group}")));
        }
        let b = r / group;
        let mut data = vec![0.0; b * c];
        for i in 0..r {
            let dst = &mut data[(i / group) * c..(i / group + 1) * c];
            for (d, v) in dst.iter_mut().zip(&t.data()[i * c..(i + 1) * c]) {
                *d += v;
            }
        }
        let inv = 1.0 / group as f64;
        data.iter_mut().for_each(|v| *v *= inv);
        let value = Tensor::matrix(b, c, data)?;
        Ok(self.push(value, Op::MeanGroups(a, group), &[a]))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.v(a).sum_squares();
        self.push(Tensor::scalar(s), Op::SumSquares(a), &[a])
    }

    /// Mean of `-ln max(p[label], 1e-12)` over rows of an `N×C` probability matrix.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let t = self.v(probs);
        let (n, c) = (t.rows(), t.cols());
        if labels.len() != n || n == 0 {
            return Err(Error::Shape(format!("cross_entropy: {n} rows vs {} labels", labels.len())));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Label(format!("label {l} outside 0..{c}")));
        }
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -t.data()[i * c + l].max(PROB_FLOOR).ln())
            .sum::<f64>()
            / n as f64;
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { probs, labels: labels.to_vec() }, &[probs]))
    }

    /// Elementwise product with a fixed mask (dropout).
    pub fn mask_mul(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let t = self.v(a);
        if mask.len() != t.len() {
            return Err(Error::Shape("mask_mul: mask length".into()));
        }
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(value, Op::MaskMul { src: a, mask }, &[a]))
    }

    /// LSTM cell on pre-activations `z = [i f g o]` (`B×4H`) and `c_prev` (`B×H`).
    /// Returns `[h | c]` as `B×2H`.
    pub fn lstm_cell(&mut self, z: Var, c_prev: Var) -> Result<Var> {
        let (tz, tc) = (self.v(z), self.v(c_prev));
        let (b, h) = (tc.rows(), tc.cols());
        if tz.rows() != b || tz.cols() != 4 * h {
            return Err(Error::Shape(format!(
                "lstm_cell: z {:?} vs state {:?}",
                tz.shape(),
                tc.shape()
            )));
        }
        let mut gates = vec![0.0; b * 4 * h];
        let mut tanh_c = vec![0.0; b * h];
        let mut out = vec![0.0; b * 2 * h];
        for r in 0..b {
            let zr = &tz.data()[r * 4 * h..(r + 1) * 4 * h];
            let gr = &mut gates[r * 4 * h..(r + 1) * 4 * h];
            for j in 0..h {
                let i = sigmoid(zr[j]);
                let f = sigmoid(zr[h + j]);
                let g = zr[2 * h + j].tanh();
                let o = sigmoid(zr[3 * h + j]);
                gr[j] = i;
                gr[h + j] = f;
                gr[2 * h + j] = g;
                gr[3 * h + j] = o;
                let c = f * tc.data()[r * h + j] + i * g;
                let tc_ = c.tanh();
                tanh_c[r * h + j] = tc_;
                out[r * 2 * h + j] = o * tc_;
                out[r * 2 * h + h + j] = c;
            }
        }
        let value = Tensor::matrix(b, 2 * h, out)?;
        Ok(self.push(value, Op::LstmCell { z, c_prev, gates, tanh_c }, &[z, c_prev]))
    }

    /// GRU cell with the reset gate applied after the recurrent projection.
    /// `xp = x·W + b_in` and `hp = h_prev·U + b_rec`, both `B×3H` ordered
    /// `[update, reset, candidate]`.
    pub fn gru_cell(&mut self, xp: Var, hp: Var, h_prev: Var) -> Result<Var> {
        let (tx, th, tp) = (self.v(xp), self.v(hp), self.v(h_prev));
        let (b, h) = (tp.rows(), tp.cols());
        if tx.rows() != b || tx.cols() != 3 * h || th.shape() != tx.shape() {
            return Err(Error::Shape(format!(
                "gru_cell: {:?}, {:?}, {:?}",
                tx.shape(),
                th.shape(),
                tp.shape()
            )));
        }
        let mut gates = vec![0.0; b * 3 * h];
        let mut out = vec![0.0; b * h];
        for r in 0..b {
            let x = &tx.data()[r * 3 * h..(r + 1) * 3 * h];
            let hh = &th.data()[r * 3 * h..(r + 1) * 3 * h];
            for j in 0..h {
                let z = sigmoid(x[j] + hh[j]);
                let rg = sigmoid(x[h + j] + hh[h + j]);
                let n = (x[2 * h + j] + rg * hh[2 * h + j]).tanh();
                gates[r * 3 * h + j] = z;
                gates[r * 3 * h + h + j] = rg;
                gates[r * 3 * h + 2 * h + j] = n;
                out[r * h + j] = z * tp.data()[r * h + j] + (1.0 - z) * n;
            }
        }
        let value = Tensor::matrix(b, h, out)?;
        Ok(self.push(value, Op::GruCell { xp, hp, h_prev, gates }, &[xp, hp, h_prev]))
    }

    /// "Same"-padded cross-correlation along time.
    ///
    /// `x` is `[B, M, T]`, `w` is `[kernels, K]`, and `routes[o] = (input map,
    /// kernel)` defines output map `o`. Padding is `(K-1)/2` on the left and
    /// the rest on the right.
    pub fn conv_time(&mut self, x: Var, w: Var, routes: Vec<(usize, usize)>) -> Result<Var> {
        let (b, m, t) = dims3(self.v(x), "conv_time")?;
        let tw = self.v(w);
        if tw.shape().len() != 2 {
            return Err(Error::Shape("conv_time: kernel must be 2-D".into()));
        }
        let (nk, k) = (tw.shape()[0], tw.shape()[1]);
        if k > t {
            return Err(Error::Shape(format!("kernel length {k} exceeds window length {t}")));
        }
        if routes.iter().any(|&(i, kk)| i >= m || kk >= nk) {
            return Err(Error::Shape("conv_time: route outside input maps or kernels".into()));
        }
        let o = routes.len();
        let pl = (k - 1) / 2;
        let xd = self.v(x).data();
        let wd = tw.data();
        let mut out = vec![0.0; b * o * t];
        for bi in 0..b {
            for (oi, &(mi, ki)) in routes.iter().enumerate() {
                let src = &xd[(bi * m + mi) * t..(bi * m + mi + 1) * t];
                let ker = &wd[ki * k..(ki + 1) * k];
                let dst = &mut out[(bi * o + oi) * t..(bi * o + oi + 1) * t];
                for (kk, &wv) in ker.iter().enumerate() {
                    // dst[ti] += wv * src[ti + kk - pl]
                    let lo = pl.saturating_sub(kk);
                    let hi = (t + pl).saturating_sub(kk).min(t);
                    for ti in lo..hi {
                        dst[ti] += wv * src[ti + kk - pl];
                    }
                }
            }
        }
        let value = Tensor::new(vec![b, o, t], out)?;
        Ok(self.push(value, Op::ConvTime { x, w, routes }, &[x, w]))
    }

    /// Grouped 1×1 mixing of maps: `x` `[B, G·S, T]`, `w` `[G·D, S]`,
    /// `out[b, g·D+d, t] = Σ_s w[g·D+d, s] · x[b, g·S+s, t]`.
    pub fn mix_maps(&mut self, x: Var, w: Var, groups: usize) -> Result<Var> {
        let (b, m, t) = dims3(self.v(x), "mix_maps")?;
        let tw = self.v(w);
        if groups == 0 || m % groups != 0 || tw.shape().len() != 2 {
            return Err(Error::Shape("mix_maps: bad grouping".into()));
        }
        let s = m / groups;
        let (o, ws) = (tw.shape()[0], tw.shape()[1]);
        if ws != s || o % groups != 0 {
            return Err(Error::Shape(format!("mix_maps: weight {:?} for {groups} groups of {s}", tw.shape())));
        }
        let d = o / groups;
        let xd = self.v(x).data();
        let mut out = vec![0.0; b * o * t];
        for bi in 0..b {
            for g in 0..groups {
                // (D×S) · (S×T)
                let wsl = &tw.data()[g * d * s..(g + 1) * d * s];
                let xs = &xd[(bi * m + g * s) * t..(bi * m + (g + 1) * s) * t];
                let dst = &mut out[(bi * o + g * d) * t..(bi * o + (g + 1) * d) * t];
                gemm(d, s, t, wsl, false, xs, false, dst, false);
            }
        }
        let value = Tensor::new(vec![b, o, t], out)?;
        Ok(self.push(value, Op::MixMaps { x, w, groups }, &[x, w]))
    }

    /// Normalisation over batch and time for each of `groups` blocks of maps
    /// in a `[B, G·S, T]` array, followed by a per-group affine map.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        eps: f64,
        stats: NormStats<'_>,
    ) -> Result<Var> {
        let (b, m, t) = dims3(self.v(x), "batch_norm")?;
        if groups == 0 || m % groups != 0 || self.v(gamma).len() != groups || self.v(beta).len() != groups {
            return Err(Error::Shape("batch_norm: parameter shapes".into()));
        }
        let s = m / groups;
        let count = (b * s * t) as f64;
        let xd = self.v(x).data();
        let for_group = |g: usize, f: &mut dyn FnMut(usize)| {
            for bi in 0..b {
                let start = (bi * m + g * s) * t;
                for i in start..start + s * t {
                    f(i);
                }
            }
        };
        let (mean, var, batch_stats) = match stats {
            NormStats::Batch => {
                let mut mean = vec![0.0; groups];
                let mut var = vec![0.0; groups];
                for g in 0..groups {
                    let mut acc = 0.0;
                    for_group(g, &mut |i| acc += xd[i]);
                    mean[g] = acc / count;
                    let mut sq = 0.0;
                    for_group(g, &mut |i| sq += (xd[i] - mean[g]).powi(2));
                    var[g] = sq / count;
                }
                let unbiased = var
                    .iter()
                    .map(|v| if count > 1.0 { v * count / (count - 1.0) } else { *v })
                    .collect();
                (mean.clone(), var, Some((mean, unbiased)))
            }
            NormStats::Running { mean, var } => {
                if mean.len() != groups || var.len() != groups {
                    return Err(Error::Shape("batch_norm: running stats length".into()));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gd, bd) = (self.v(gamma).data(), self.v(beta).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for g in 0..groups {
            for_group(g, &mut |i| {
                xhat[i] = (xd[i] - mean[g]) * inv_std[g];
                out[i] = gd[g] * xhat[i] + bd[g];
            });
        }
        let value = Tensor::new(vec![b, m, t], out)?;
        let saved = BatchNormSaved { x, gamma, beta, groups, xhat, inv_std, batch_stats };
        Ok(self.push(value, Op::BatchNorm(Box::new(saved)), &[x, gamma, beta]))
    }

    /// Non-overlapping average pooling along time; a trailing partial window is dropped.
    pub fn avg_pool_time(&mut self, x: Var, pool: usize) -> Result<Var> {
        let (b, m, t) = dims3(self.v(x), "avg_pool_time")?;
        if pool == 0 || t / pool == 0 {
            return Err(Error::Shape(format!("cannot pool {t} samples by {pool}")));
        }
        let to = t / pool;
        let xd = self.v(x).data();
        let mut out = vec![0.0; b * m * to];
        for row in 0..b * m {
            for j in 0..to {
                let s: f64 = xd[row * t + j * pool..row * t + (j + 1) * pool].iter().sum();
                out[row * to + j] = s / pool as f64;
            }
        }
        let value = Tensor::new(vec![b, m, to], out)?;
        Ok(self.push(value, Op::AvgPoolTime { x, pool }, &[x]))
    }

    /// Per-row normalisation over the last axis with learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let t = self.v(x);
        let (r, d) = (t.rows(), t.cols());
        if self.v(gamma).len() != d || self.v(beta).len() != d {
            return Err(Error::Shape("layer_norm: parameter shapes".into()));
        }
        let (gd, bd) = (self.v(gamma).data(), self.v(beta).data());
        let mut xhat = vec![0.0; r * d];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * d];
        for i in 0..r {
            let row = &t.data()[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                xhat[i * d + j] = xh;
                out[i * d + j] = gd[j] * xh + bd[j];
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, &[x, gamma, beta]))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.v(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.v(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = (if matches!(node.op, Op::Leaf) { grads[idx].clone() } else { grads[idx].take() })
            else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let n = &self.nodes[i];
                match (&n.op, n.tracked, g) {
                    (Op::Leaf, true, Some(g)) => Some(Tensor::new(n.value.shape().to_vec(), g).unwrap()),
                    _ => None,
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        // Accumulator for input `v`; a no-op for untracked inputs.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].tracked {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(buf);
        };
        let val = |v: Var| nodes[v.0].value.data();
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                acc(*a, &mut |da| gemm(m, n, k, g, false, tb.data(), true, da, true));
                acc(*b, &mut |db| gemm(k, m, n, ta.data(), true, g, false, db, true));
            }
            Op::Transpose(a) => {
                let t = &nodes[a.0].value;
                let (r, c) = (t.rows(), t.cols());
                acc(*a, &mut |da| {
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |db| db.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |db| db.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |da| {
                    for i in 0..da.len() {
                        da[i] += g[i] * vb[i];
                    }
                });
                acc(*b, &mut |db| {
                    for i in 0..db.len() {
                        db[i] += g[i] * va[i];
                    }
                });
            }
            Op::AddRow(a, bias) => {
                let c = nodes[bias.0].value.len();
                acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*bias, &mut |db| {
                    for row in g.chunks_exact(c.max(1)) {
                        db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, g)| *d += g * s)),
            Op::Sigmoid(a) => acc(*a, &mut |da| {
                for i in 0..da.len() {
                    da[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |da| {
                for i in 0..da.len() {
                    da[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            }),
            Op::Elu(a) => {
                let x = val(*a);
                acc(*a, &mut |da| {
                    for i in 0..da.len() {
                        da[i] += g[i] * if x[i] > 0.0 { 1.0 } else { y[i] + 1.0 };
                    }
                })
            }
            Op::Relu(a) => {
                let x = val(*a);
                acc(*a, &mut |da| {
                    for i in 0..da.len() {
                        if x[i] > 0.0 {
                            da[i] += g[i];
                        }
                    }
                })
            }
            Op::SoftmaxRows(a) => {
                let c = node.value.cols();
                acc(*a, &mut |da| {
                    for ((dr, gr), yr) in da.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(y.chunks_exact(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        for j in 0..c {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                })
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let r = node.value.rows();
                let mut off = 0;
                for p in parts {
                    let c = nodes[p.0].value.cols();
                    acc(*p, &mut |dp| {
                        for i in 0..r {
                            for j in 0..c {
                                dp[i * c + j] += g[i * total + off + j];
                            }
                        }
                    });
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = nodes[p.0].value.len();
                    acc(*p, &mut |dp| dp.iter_mut().zip(&g[off..off + n]).for_each(|(d, g)| *d += g));
                    off += n;
                }
            }
            Op::Slice { src, r0, c0 } => {
                let c = nodes[src.0].value.cols();
                let (h, w) = (node.value.rows(), node.value.cols());
                acc(*src, &mut |ds| {
                    for i in 0..h {
                        let row = &mut ds[(r0 + i) * c + c0..(r0 + i) * c + c0 + w];
                        row.iter_mut().zip(&g[i * w..(i + 1) * w]).for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, g)| *d += g)),
            Op::Sum(a) => acc(*a, &mut |da| da.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = nodes[a.0].value.len() as f64;
                acc(*a, &mut |da| da.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::MeanGroups(a, group) => {
                let c = node.value.cols();
                let inv = 1.0 / *group as f64;
                acc(*a, &mut |da| {
                    for (i, row) in da.chunks_exact_mut(c).enumerate() {
                        let src = &g[(i / group) * c..(i / group + 1) * c];
                        row.iter_mut().zip(src).for_each(|(d, g)| *d += g * inv);
                    }
                });
            }
            Op::SumSquares(a) => {
                let x = val(*a);
                acc(*a, &mut |da| {
                    for i in 0..da.len() {
                        da[i] += 2.0 * x[i] * g[0];
                    }
                });
            }
            Op::CrossEntropy { probs, labels } => {
                let p = val(*probs);
                let c = nodes[probs.0].value.cols();
                let n = labels.len() as f64;
                acc(*probs, &mut |dp| {
                    for (i, &l) in labels.iter().enumerate() {
                        let pv = p[i * c + l];
                        if pv > PROB_FLOOR {
                            dp[i * c + l] -= g[0] / (n * pv);
                        }
                    }
                });
            }
            Op::MaskMul { src, mask } => acc(*src, &mut |ds| {
                for i in 0..ds.len() {
                    ds[i] += g[i] * mask[i];
                }
            }),
            Op::LstmCell { z, c_prev, gates, tanh_c } => {
                let cp = val(*c_prev);
                let h = nodes[c_prev.0].value.cols();
                let b = nodes[c_prev.0].value.rows();
                let mut dz = vec![0.0; b * 4 * h];
                let mut dcp = vec![0.0; b * h];
                for r in 0..b {
                    let gr = &gates[r * 4 * h..(r + 1) * 4 * h];
                    for j in 0..h {
                        let (i, f, gg, o) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                        let tc = tanh_c[r * h + j];
                        let dh = g[r * 2 * h + j];
                        let dc = g[r * 2 * h + h + j] + dh * o * (1.0 - tc * tc);
                        let dzr = &mut dz[r * 4 * h..(r + 1) * 4 * h];
                        dzr[j] = dc * gg * i * (1.0 - i);
                        dzr[h + j] = dc * cp[r * h + j] * f * (1.0 - f);
                        dzr[2 * h + j] = dc * i * (1.0 - gg * gg);
                        dzr[3 * h + j] = dh * tc * o * (1.0 - o);
                        dcp[r * h + j] = dc * f;
                    }
                }
                acc(*z, &mut |d| d.iter_mut().zip(&dz).for_each(|(d, g)| *d += g));
                acc(*c_prev, &mut |d| d.iter_mut().zip(&dcp).for_each(|(d, g)| *d += g));
            }
            Op::GruCell { xp, hp, h_prev, gates } => {
                let hpv = val(*hp);
                let prev = val(*h_prev);
                let h = nodes[h_prev.0].value.cols();
                let b = nodes[h_prev.0].value.rows();
                let mut dx = vec![0.0; b * 3 * h];
                let mut dhp = vec![0.0; b * 3 * h];
                let mut dprev = vec![0.0; b * h];
                for r in 0..b {
                    for j in 0..h {
                        let base = r * 3 * h;
                        let (z, rg, n) = (gates[base + j], gates[base + h + j], gates[base + 2 * h + j]);
                        let dh = g[r * h + j];
                        let dn_pre = dh * (1.0 - z) * (1.0 - n * n);
                        let dz_pre = dh * (prev[r * h + j] - n) * z * (1.0 - z);
                        let dr_pre = dn_pre * hpv[base + 2 * h + j] * rg * (1.0 - rg);
                        dx[base + j] = dz_pre;
                        dx[base + h + j] = dr_pre;
                        dx[base + 2 * h + j] = dn_pre;
                        dhp[base + j] = dz_pre;
                        dhp[base + h + j] = dr_pre;
                        dhp[base + 2 * h + j] = dn_pre * rg;
                        dprev[r * h + j] = dh * z;
                    }
                }
                acc(*xp, &mut |d| d.iter_mut().zip(&dx).for_each(|(d, g)| *d += g));
                acc(*hp, &mut |d| d.iter_mut().zip(&dhp).for_each(|(d, g)| *d += g));
                acc(*h_prev, &mut |d| d.iter_mut().zip(&dprev).for_each(|(d, g)| *d += g));
            }
            Op::ConvTime { x, w, routes } => {
                let tx = &nodes[x.0].value;
                let (b, m, t) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                let k = nodes[w.0].value.shape()[1];
                let o = routes.len();
                let pl = (k - 1) / 2;
                let (xd, wd) = (tx.data(), val(*w));
                acc(*x, &mut |dx| {
                    for bi in 0..b {
                        for (oi, &(mi, ki)) in routes.iter().enumerate() {
                            let gy = &g[(bi * o + oi) * t..(bi * o + oi + 1) * t];
                            let dsrc = &mut dx[(bi * m + mi) * t..(bi * m + mi + 1) * t];
                            for kk in 0..k {
                                let wv = wd[ki * k + kk];
                                let lo = pl.saturating_sub(kk);
                                let hi = (t + pl).saturating_sub(kk).min(t);
                                for ti in lo..hi {
                                    dsrc[ti + kk - pl] += wv * gy[ti];
                                }
                            }
                        }
                    }
                });
                acc(*w, &mut |dw| {
                    for bi in 0..b {
                        for (oi, &(mi, ki)) in routes.iter().enumerate() {
                            let gy = &g[(bi * o + oi) * t..(bi * o + oi + 1) * t];
                            let src = &xd[(bi * m + mi) * t..(bi * m + mi + 1) * t];
                            for kk in 0..k {
                                let lo = pl.saturating_sub(kk);
                                let hi = (t + pl).saturating_sub(kk).min(t);
                                let mut s = 0.0;
                                for ti in lo..hi {
                                    s += gy[ti] * src[ti + kk - pl];
                                }
                                dw[ki * k + kk] += s;
                            }
                        }
                    }
                });
            }
            Op::MixMaps { x, w, groups } => {
                let tx = &nodes[x.0].value;
                let (b, m, t) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                let o = node.value.shape()[1];
                let s = m / groups;
                let d = o / groups;
                let (xd, wd) = (tx.data(), val(*w));
                acc(*x, &mut |dx| {
                    for bi in 0..b {
                        for gi in 0..*groups {
                            let wsl = &wd[gi * d * s..(gi + 1) * d * s];
                            let gy = &g[(bi * o + gi * d) * t..(bi * o + (gi + 1) * d) * t];
                            let dst = &mut dx[(bi * m + gi * s) * t..(bi * m + (gi + 1) * s) * t];
                            gemm(s, d, t, wsl, true, gy, false, dst, true);
                        }
                    }
                });
                acc(*w, &mut |dw| {
                    for bi in 0..b {
                        for gi in 0..*groups {
                            let gy = &g[(bi * o + gi * d) * t..(bi * o + (gi + 1) * d) * t];
                            let xs = &xd[(bi * m + gi * s) * t..(bi * m + (gi + 1) * s) * t];
                            let dst = &mut dw[gi * d * s..(gi + 1) * d * s];
                            gemm(d, t, s, gy, false, xs, true, dst, true);
                        }
                    }
                });
            }
            Op::BatchNorm(saved) => {
                let BatchNormSaved { x, gamma, beta, groups, xhat, inv_std, batch_stats } = saved.as_ref();
                let tx = &nodes[x.0].value;
                let (b, m, t) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                let s = m / groups;
                let count = (b * s * t) as f64;
                let gd = val(*gamma);
                let mut sum_g = vec![0.0; *groups];
                let mut sum_gx = vec![0.0; *groups];
                for bi in 0..b {
                    for gi in 0..*groups {
                        let start = (bi * m + gi * s) * t;
                        for i in start..start + s * t {
                            sum_g[gi] += g[i];
                            sum_gx[gi] += g[i] * xhat[i];
                        }
                    }
                }
                acc(*gamma, &mut |d| d.iter_mut().zip(&sum_gx).for_each(|(d, v)| *d += v));
                acc(*beta, &mut |d| d.iter_mut().zip(&sum_g).for_each(|(d, v)| *d += v));
                let train = batch_stats.is_some();
                acc(*x, &mut |dx| {
                    for bi in 0..b {
                        for gi in 0..*groups {
                            let start = (bi * m + gi * s) * t;
                            let scale = gd[gi] * inv_std[gi];
                            for i in start..start + s * t {
                                dx[i] += if train {
                                    scale * (g[i] - sum_g[gi] / count - xhat[i] * sum_gx[gi] / count)
                                } else {
                                    scale * g[i]
                                };
                            }
                        }
                    }
                });
            }
            Op::AvgPoolTime { x, pool } => {
                let t = nodes[x.0].value.shape()[2];
                let to = node.value.shape()[2];
                let inv = 1.0 / *pool as f64;
                acc(*x, &mut |dx| {
                    for (row, gr) in g.chunks_exact(to).enumerate() {
                        for (j, gv) in gr.iter().enumerate() {
                            for p in 0..*pool {
                                dx[row * t + j * pool + p] += gv * inv;
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let d = node.value.cols();
                let gd = val(*gamma);
                acc(*gamma, &mut |dg| {
                    for (gr, xr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * xr[j];
                        }
                    }
                });
                acc(*beta, &mut |db| {
                    for gr in g.chunks_exact(d) {
                        db.iter_mut().zip(gr).for_each(|(d, g)| *d += g);
                    }
                });
                acc(*x, &mut |dx| {
                    for (i, (gr, xr)) in g.chunks_exact(d).zip(xhat.chunks_exact(d)).enumerate() {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..d {
                            let dxh = gr[j] * gd[j];
                            s1 += dxh;
                            s2 += dxh * xr[j];
                        }
                        let dn = d as f64;
                        for j in 0..d {
                            let dxh = gr[j] * gd[j];
                            dx[i * d + j] += inv_std[i] * (dxh - s1 / dn - xr[j] * s2 / dn);
                        }
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, v: &[f64]) -> Tensor {
        Tensor::matrix(r, c, v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(m(1, 3, &[0.0, 0.0, 0.0]));
        let y = tape.softmax_rows(x).unwrap();
        for &p in tape.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_over_empty_axis_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 0], vec![]).unwrap());
        assert!(matches!(tape.softmax_rows(x), Err(Error::Parameter(_))));
    }

    #[test]
    fn matmul_of_ones() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::filled(&[2, 3], 1.0));
        let b = tape.constant(Tensor::filled(&[3, 2], 1.0));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0; 4]);
        let bad = tape.constant(Tensor::filled(&[2, 2], 1.0));
        assert!(matches!(tape.matmul(a, bad), Err(Error::Shape(_))));
    }

    #[test]
    fn tanh_gradient_vs_central_difference() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(0.5));
        let y = tape.tanh(x);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap().get(x).unwrap().data()[0];
        let h = 1e-5;
        let fd = ((0.5f64 + h).tanh() - (0.5f64 - h).tanh()) / (2.0 * h);
        assert!(((g - fd) / fd).abs() < 1e-6);
    }

    #[test]
    fn gradient_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![2, 2, 3], (0..12).map(f64::from).collect()).unwrap());
        let s = tape.sum(x);
        assert_eq!(tape.backward(s).unwrap().get(x).unwrap().data(), &[1.0; 12]);
    }

    #[test]
    fn gradient_of_squared_norm() {
        let mut tape = Tape::new();
        let x = tape.param(m(1, 3, &[1.0, 2.0, 3.0]));
        let xt = tape.transpose(x).unwrap();
        let q = tape.matmul(x, xt).unwrap();
        let s = tape.sum(q);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(2.0));
        let c = tape.constant(Tensor::scalar(3.0));
        let p = tape.mul(w, c).unwrap();
        let g = tape.backward(p).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[3.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn cross_entropy_values() {
        let mut tape = Tape::new();
        let p = tape.constant(m(2, 3, &[1.0 / 3.0; 6]));
        let l = tape.cross_entropy(p, &[0, 2]).unwrap();
        assert!((tape.value(l).data()[0] - 3f64.ln()).abs() < 1e-15);
        let one_hot = tape.constant(m(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
        let l = tape.cross_entropy(one_hot, &[0, 1]).unwrap();
        assert!(tape.value(l).data()[0] <= -(1.0f64 - 1e-12).ln());
        assert!(matches!(tape.cross_entropy(one_hot, &[0, 3]), Err(Error::Label(_))));
    }

    #[test]
    fn conv_time_matches_sliding_dot_product() {
        let signal: Vec<f64> = (0..16).map(|v| (v as f64 * 0.7).sin() + v as f64 * 0.1).collect();
        let kernel = [0.5, -1.0, 2.0, 0.25];
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 1, 16], signal.clone()).unwrap());
        let w = tape.constant(m(1, 4, &kernel));
        let y = tape.conv_time(x, w, vec![(0, 0)]).unwrap();
        // same padding: 1 on the left, 2 on the right
        for t in 0..16 {
            let mut s = 0.0;
            for k in 0..4 {
                let idx = t as isize + k as isize - 1;
                if (0..16).contains(&idx) {
                    s += kernel[k] * signal[idx as usize];
                }
            }
            assert!((tape.value(y).data()[t] - s).abs() < 1e-14);
        }
    }

    #[test]
    fn kernel_longer_than_window_is_shape_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 8]));
        let w = tape.constant(Tensor::zeros(&[1, 9]));
        assert!(matches!(tape.conv_time(x, w, vec![(0, 0)]), Err(Error::Shape(_))));
    }
}
