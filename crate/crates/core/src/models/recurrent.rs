//! Bidirectional LSTM and GRU layers, unrolled step by step on the tape.
//!
//! LSTM, gates ordered `[i, f, g, o]`:
//!
//! ```text
//! z_t = x_t·W + h_{t-1}·U + b
//! i = σ(z_i)  f = σ(z_f)  g = tanh(z_g)  o = σ(z_o)
//! c_t = f ⊙ c_{t-1} + i ⊙ g
//! h_t = o ⊙ tanh(c_t)
//! ```
//!
//! GRU, gates ordered `[z, r, n]`, reset applied after the recurrent product:
//!
//! ```text
//! z = σ(x·W_z + b_z + h·U_z + c_z)
//! r = σ(x·W_r + b_r + h·U_r + c_r)
//! n = tanh(x·W_n + b_n + r ⊙ (h·U_n + c_n))
//! h_t = z ⊙ h_{t-1} + (1 - z) ⊙ n
//! ```
//!
//! Sequences on the tape are time-major: row `t·B + b` holds step `t` of sample `b`.

use crate::error::{Error, Result};
use crate::numerics::params::glorot_uniform;
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `input × 4H`
    pub w_in: Tensor,
    /// `H × 4H`
    pub w_rec: Tensor,
    /// `4H`
    pub bias: Tensor,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_in: Tensor::zeros(&[input, 4 * hidden]),
            w_rec: Tensor::zeros(&[hidden, 4 * hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    /// Glorot-uniform kernels, zero biases except a forget-gate bias of one.
    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        Self {
            w_in: glorot_uniform(&[input, 4 * hidden], input, 4 * hidden, rng),
            w_rec: glorot_uniform(&[hidden, 4 * hidden], hidden, 4 * hidden, rng),
            bias,
        }
    }

    /// `(input, hidden)` after checking the shapes agree.
    pub fn dims(&self) -> Result<(usize, usize)> {
        let (wi, wr) = (self.w_in.shape(), self.w_rec.shape());
        let ok = wi.len() == 2
            && wr.len() == 2
            && wr[1] == 4 * wr[0]
            && wi[1] == wr[1]
            && self.bias.len() == wr[1];
        if !ok {
            return Err(Error::Shape(format!("inconsistent LSTM parameters {wi:?} {wr:?} {:?}", self.bias.shape())));
        }
        Ok((wi[0], wr[0]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    /// `input × 3H`
    pub w_in: Tensor,
    /// `H × 3H`
    pub w_rec: Tensor,
    pub b_in: Tensor,
    pub b_rec: Tensor,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_in: Tensor::zeros(&[input, 3 * hidden]),
            w_rec: Tensor::zeros(&[hidden, 3 * hidden]),
            b_in: Tensor::zeros(&[3 * hidden]),
            b_rec: Tensor::zeros(&[3 * hidden]),
        }
    }

    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            w_in: glorot_uniform(&[input, 3 * hidden], input, 3 * hidden, rng),
            w_rec: glorot_uniform(&[hidden, 3 * hidden], hidden, 3 * hidden, rng),
            ..Self::zeros(input, hidden)
        }
    }

    pub fn dims(&self) -> Result<(usize, usize)> {
        let (wi, wr) = (self.w_in.shape(), self.w_rec.shape());
        let ok = wi.len() == 2
            && wr.len() == 2
            && wr[1] == 3 * wr[0]
            && wi[1] == wr[1]
            && self.b_in.len() == wr[1]
            && self.b_rec.len() == wr[1];
        if !ok {
            return Err(Error::Shape(format!("inconsistent GRU parameters {wi:?} {wr:?}")));
        }
        Ok((wi[0], wr[0]))
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LstmVars {
    pub w_in: Var,
    pub w_rec: Var,
    pub bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GruVars {
    pub w_in: Var,
    pub w_rec: Var,
    pub b_in: Var,
    pub b_rec: Var,
}

fn step_order(t: usize, reverse: bool) -> Vec<usize> {
    if reverse {
        (0..t).rev().collect()
    } else {
        (0..t).collect()
    }
}

/// One LSTM direction over `x` (`(T·B)×C`). Hidden states come back indexed by time step.
pub(crate) fn lstm_pass(tape: &mut Tape, x: Var, t: usize, b: usize, p: LstmVars, reverse: bool) -> Result<Vec<Var>> {
    let hidden = tape.value(p.w_rec).shape()[0];
    let xw = tape.matmul(x, p.w_in)?;
    let xp = tape.add_row(xw, p.bias)?;
    let zeros = tape.constant(Tensor::zeros(&[b, hidden]));
    let (mut h, mut c) = (zeros, zeros);
    let mut out = vec![zeros; t];
    for s in step_order(t, reverse) {
        let zx = tape.slice_rows(xp, s * b..(s + 1) * b)?;
        let zh = tape.matmul(h, p.w_rec)?;
        let z = tape.add(zx, zh)?;
        let hc = tape.lstm_cell(z, c)?;
        h = tape.slice_cols(hc, 0..hidden)?;
        c = tape.slice_cols(hc, hidden..2 * hidden)?;
        out[s] = h;
    }
    Ok(out)
}

/// Both LSTM directions, concatenated per step: `(T·B)×2H`, forward half first.
pub(crate) fn bilstm_sequence(tape: &mut Tape, x: Var, t: usize, b: usize, fwd: LstmVars, bwd: LstmVars) -> Result<Var> {
    let f = lstm_pass(tape, x, t, b, fwd, false)?;
    let r = lstm_pass(tape, x, t, b, bwd, true)?;
    let fs = tape.concat_rows(&f)?;
    let rs = tape.concat_rows(&r)?;
    tape.concat_cols(&[fs, rs])
}

/// One GRU direction over `x` (`(T·B)×C`); returns the final hidden state `B×H`.
pub(crate) fn gru_pass(tape: &mut Tape, x: Var, t: usize, b: usize, p: GruVars, reverse: bool) -> Result<Var> {
    let hidden = tape.value(p.w_rec).shape()[0];
    let xw = tape.matmul(x, p.w_in)?;
    let xp = tape.add_row(xw, p.b_in)?;
    let mut h = tape.constant(Tensor::zeros(&[b, hidden]));
    for s in step_order(t, reverse) {
        let xs = tape.slice_rows(xp, s * b..(s + 1) * b)?;
        let hw = tape.matmul(h, p.w_rec)?;
        let hp = tape.add_row(hw, p.b_rec)?;
        h = tape.gru_cell(xs, hp, h)?;
    }
    Ok(h)
}

/// Final states of both GRU directions: `B×2H`, forward first.
pub(crate) fn bigru_final(tape: &mut Tape, x: Var, t: usize, b: usize, fwd: GruVars, bwd: GruVars) -> Result<Var> {
    let f = gru_pass(tape, x, t, b, fwd, false)?;
    let r = gru_pass(tape, x, t, b, bwd, true)?;
    tape.concat_cols(&[f, r])
}

fn check_sequence(seq: &Tensor, input: usize) -> Result<usize> {
    match seq.shape() {
        [t, c] if *c == input && *t > 0 => Ok(*t),
        s => Err(Error::Shape(format!("expected a T×{input} sequence, got {s:?}"))),
    }
}

fn lstm_vars(tape: &mut Tape, p: &LstmParams) -> LstmVars {
    LstmVars {
        w_in: tape.constant(p.w_in.clone()),
        w_rec: tape.constant(p.w_rec.clone()),
        bias: tape.constant(p.bias.clone()),
    }
}

fn gru_vars(tape: &mut Tape, p: &GruParams) -> GruVars {
    GruVars {
        w_in: tape.constant(p.w_in.clone()),
        w_rec: tape.constant(p.w_rec.clone()),
        b_in: tape.constant(p.b_in.clone()),
        b_rec: tape.constant(p.b_rec.clone()),
    }
}

/// Bidirectional LSTM over a `T×C` sequence, giving `T×2H`.
pub fn bilstm_forward(seq: &Tensor, fwd: &LstmParams, bwd: &LstmParams) -> Result<Tensor> {
    let (input, hidden) = fwd.dims()?;
    if bwd.dims()? != (input, hidden) {
        return Err(Error::Shape("forward and backward LSTM sizes differ".into()));
    }
    let t = check_sequence(seq, input)?;
    let mut tape = Tape::new();
    let x = tape.constant(seq.clone());
    let (f, b) = (lstm_vars(&mut tape, fwd), lstm_vars(&mut tape, bwd));
    let out = bilstm_sequence(&mut tape, x, t, 1, f, b)?;
    Ok(tape.value(out).clone())
}

/// Bidirectional GRU over a `T×C` sequence, giving the `2H` vector of final states.
pub fn bigru_forward(seq: &Tensor, fwd: &GruParams, bwd: &GruParams) -> Result<Tensor> {
    let (input, hidden) = fwd.dims()?;
    if bwd.dims()? != (input, hidden) {
        return Err(Error::Shape("forward and backward GRU sizes differ".into()));
    }
    let t = check_sequence(seq, input)?;
    let mut tape = Tape::new();
    let x = tape.constant(seq.clone());
    let (f, b) = (gru_vars(&mut tape, fwd), gru_vars(&mut tape, bwd));
    let out = bigru_final(&mut tape, x, t, 1, f, b)?;
    Tensor::new(vec![2 * hidden], tape.value(out).data().to_vec())
}
