//! Encoder-only transformer over time-step tokens with mean-pooled readout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::dropout::{dropout_node, Mode};
use crate::numerics::params::{glorot_uniform, Param, ParamSet};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;
use crate::numerics::train::{Forward, Network};
use crate::preprocess::N_CLASSES;
use crate::seed::{rng_for, Rng};

pub const LN_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub num_blocks: usize,
    pub dropout: f64,
    pub l2: f64,
    pub positional_encoding: bool,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self { embed_dim: 32, num_heads: 2, ff_dim: 64, num_blocks: 2, dropout: 0.6, l2: 0.05, positional_encoding: true }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.num_heads == 0 || self.ff_dim == 0 {
            return Err(Error::Config("transformer dimensions must be positive".into()));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::Config("l2 must be non-negative".into()));
        }
        Ok(())
    }
}

/// Sinusoidal table: `sin(p / 10000^(2i/d))` in even columns, `cos` in odd ones.
pub fn positional_encoding(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for p in 0..len {
        for j in 0..dim {
            let angle = p as f64 / 10000f64.powf((j / 2 * 2) as f64 / dim as f64);
            data[p * dim + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(len, dim, data).unwrap()
}

/// Scaled dot-product attention for one sequence and head. Returns the
/// attended values and the row-stochastic weight matrix.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let dk = tape.value(k).cols();
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt());
    let weights = tape.softmax_rows(scores)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Block {
    // q, k, v, o weights then biases
    first: usize,
}

const PER_BLOCK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerNet {
    pub config: TransformerConfig,
    channels: usize,
    samples: usize,
    params: ParamSet,
    pe: Tensor,
}

impl TransformerNet {
    pub fn new(config: TransformerConfig, channels: usize, samples: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if channels == 0 || samples == 0 {
            return Err(Error::Shape("empty window".into()));
        }
        let mut rng = rng_for(seed, "init");
        let (e, f) = (config.embed_dim, config.ff_dim);
        let mut params = ParamSet::default();
        params.push(Param::weight("embed.w", glorot_uniform(&[channels, e], channels, e, &mut rng)));
        params.push(Param::bias("embed.b", Tensor::zeros(&[e])));
        for b in 0..config.num_blocks {
            for name in ["q", "k", "v", "o"] {
                params.push(Param::weight(format!("block{b}.w{name}"), glorot_uniform(&[e, e], e, e, &mut rng)));
                params.push(Param::bias(format!("block{b}.b{name}"), Tensor::zeros(&[e])));
            }
            params.push(Param::weight(format!("block{b}.ln1.gamma"), Tensor::filled(&[e], 1.0)).unregularized());
            params.push(Param::bias(format!("block{b}.ln1.beta"), Tensor::zeros(&[e])));
            params.push(Param::weight(format!("block{b}.ff1.w"), glorot_uniform(&[e, f], e, f, &mut rng)));
            params.push(Param::bias(format!("block{b}.ff1.b"), Tensor::zeros(&[f])));
            params.push(Param::weight(format!("block{b}.ff2.w"), glorot_uniform(&[f, e], f, e, &mut rng)));
            params.push(Param::bias(format!("block{b}.ff2.b"), Tensor::zeros(&[e])));
            params.push(Param::weight(format!("block{b}.ln2.gamma"), Tensor::filled(&[e], 1.0)).unregularized());
            params.push(Param::bias(format!("block{b}.ln2.beta"), Tensor::zeros(&[e])));
        }
        params.push(Param::weight("head.w", glorot_uniform(&[e, N_CLASSES], e, N_CLASSES, &mut rng)));
        params.push(Param::bias("head.b", Tensor::zeros(&[N_CLASSES])));
        let pe = positional_encoding(samples, e);
        Ok(Self { config, channels, samples, params, pe })
    }

    fn dense(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }

    fn block(&self, tape: &mut Tape, vars: &[Var], h: Var, n: usize, blk: Block, mode: Mode, rng: &mut Rng) -> Result<Var> {
        let t = self.samples;
        let heads = self.config.num_heads;
        let dh = self.config.embed_dim / heads;
        let p = |i: usize| vars[blk.first + i];
        let q = Self::dense(tape, h, p(0), p(1))?;
        let k = Self::dense(tape, h, p(2), p(3))?;
        let v = Self::dense(tape, h, p(4), p(5))?;
        let mut per_sample = Vec::with_capacity(n);
        for s in 0..n {
            let rows = s * t..(s + 1) * t;
            let mut outs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let cols = hd * dh..(hd + 1) * dh;
                let qs = tape.slice(q, rows.clone(), cols.clone())?;
                let ks = tape.slice(k, rows.clone(), cols.clone())?;
                let vs = tape.slice(v, rows.clone(), cols)?;
                outs.push(attention(tape, qs, ks, vs)?.0);
            }
            per_sample.push(if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? });
        }
        let att = if n == 1 { per_sample[0] } else { tape.concat_rows(&per_sample)? };
        let att = Self::dense(tape, att, p(6), p(7))?;
        let att = dropout_node(tape, att, self.config.dropout, mode, rng)?;
        let res = tape.add(h, att)?;
        let h = tape.layer_norm(res, p(8), p(9), LN_EPSILON)?;

        let ff = Self::dense(tape, h, p(10), p(11))?;
        let ff = tape.relu(ff);
        let ff = Self::dense(tape, ff, p(12), p(13))?;
        let ff = dropout_node(tape, ff, self.config.dropout, mode, rng)?;
        let res = tape.add(h, ff)?;
        tape.layer_norm(res, p(14), p(15), LN_EPSILON)
    }
}

impl Network for TransformerNet {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn l2_coefficient(&self) -> f64 {
        self.config.l2
    }

    fn input_shape(&self) -> (usize, usize) {
        (self.channels, self.samples)
    }

    fn forward(&self, tape: &mut Tape, vars: &[Var], x: &[f64], n: usize, mode: Mode, rng: &mut Rng) -> Result<Forward> {
        let (c, t) = (self.channels, self.samples);
        if x.len() != n * c * t || n == 0 {
            return Err(Error::Shape(format!("expected {n} windows of {c}×{t}, got {} values", x.len())));
        }
        // tokens: row s·T + step holds the C electrode values of one time step
        let mut tokens = vec![0.0; n * t * c];
        for s in 0..n {
            for ch in 0..c {
                for step in 0..t {
                    tokens[(s * t + step) * c + ch] = x[(s * c + ch) * t + step];
                }
            }
        }
        let xt = tape.constant(Tensor::matrix(n * t, c, tokens)?);
        let mut h = Self::dense(tape, xt, vars[0], vars[1])?;
        if self.config.positional_encoding {
            let e = self.config.embed_dim;
            let mut tiled = Vec::with_capacity(n * t * e);
            for _ in 0..n {
                tiled.extend_from_slice(self.pe.data());
            }
            let pe = tape.constant(Tensor::matrix(n * t, e, tiled)?);
            h = tape.add(h, pe)?;
        }
        for b in 0..self.config.num_blocks {
            h = self.block(tape, vars, h, n, Block { first: 2 + b * PER_BLOCK }, mode, rng)?;
        }
        let pooled = tape.mean_groups(h, t)?;
        let head = 2 + self.config.num_blocks * PER_BLOCK;
        let logits = Self::dense(tape, pooled, vars[head], vars[head + 1])?;
        let probs = tape.softmax_rows(logits)?;
        Ok(Forward { probs, norm_updates: Vec::new() })
    }
}
