//! The stacked BiLSTM → BiGRU classifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::recurrent::{bigru_final, bilstm_sequence, GruParams, GruVars, LstmParams, LstmVars};
use crate::numerics::dropout::{dropout_node, Mode};
use crate::numerics::params::{glorot_uniform, Param, ParamSet};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;
use crate::numerics::train::{Forward, Network};
use crate::preprocess::N_CLASSES;
use crate::seed::{rng_for, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridConfig {
    pub lstm_units: usize,
    pub gru_units: usize,
    pub dropout: f64,
    /// L2 coefficient on every weight matrix.
    pub l2: f64,
    /// Global gradient-norm clip applied during training.
    pub clip_norm: Option<f64>,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self { lstm_units: 128, gru_units: 128, dropout: 0.2, l2: 0.01, clip_norm: Some(5.0) }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lstm_units == 0 || self.gru_units == 0 {
            return Err(Error::Config("recurrent unit counts must be positive".into()));
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

#[derive(Debug, Clone, PartialEq)]
pub struct HybridNet {
    pub config: HybridConfig,
    channels: usize,
    samples: usize,
    params: ParamSet,
}

// Parameter layout: lstm fwd/bwd (w_in, w_rec, bias), gru fwd/bwd (w_in, w_rec, b_in, b_rec), dense (w, b).
const LSTM: [usize; 2] = [0, 3];
const GRU: [usize; 2] = [6, 10];
const DENSE: usize = 14;

/// Rearranges `n` channel-major `C×T` windows into a time-major `(T·n)×C` matrix.
pub(crate) fn time_major(x: &[f64], n: usize, c: usize, t: usize) -> Tensor {
    let mut out = vec![0.0; n * c * t];
    for b in 0..n {
        for ch in 0..c {
            let src = &x[(b * c + ch) * t..(b * c + ch + 1) * t];
            for (s, &v) in src.iter().enumerate() {
                out[(s * n + b) * c + ch] = v;
            }
        }
    }
    Tensor::matrix(t * n, c, out).unwrap()
}

impl HybridNet {
    pub fn new(config: HybridConfig, channels: usize, samples: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if channels == 0 || samples == 0 {
            return Err(Error::Shape("empty window".into()));
        }
        let mut rng = rng_for(seed, "init");
        let mut params = ParamSet::default();
        let (hl, hg) = (config.lstm_units, config.gru_units);
        for dir in ["fwd", "bwd"] {
            let p = LstmParams::init(channels, hl, &mut rng);
            params.push(Param::weight(format!("lstm_{dir}.w_in"), p.w_in));
            params.push(Param::weight(format!("lstm_{dir}.w_rec"), p.w_rec));
            params.push(Param::bias(format!("lstm_{dir}.bias"), p.bias));
        }
        for dir in ["fwd", "bwd"] {
            let p = GruParams::init(2 * hl, hg, &mut rng);
            params.push(Param::weight(format!("gru_{dir}.w_in"), p.w_in));
            params.push(Param::weight(format!("gru_{dir}.w_rec"), p.w_rec));
            params.push(Param::bias(format!("gru_{dir}.b_in"), p.b_in));
            params.push(Param::bias(format!("gru_{dir}.b_rec"), p.b_rec));
        }
        params.push(Param::weight("dense.w", glorot_uniform(&[2 * hg, N_CLASSES], 2 * hg, N_CLASSES, &mut rng)));
        params.push(Param::bias("dense.b", Tensor::zeros(&[N_CLASSES])));
        debug_assert_eq!(params.len(), DENSE + 2);
        Ok(Self { config, channels, samples, params })
    }

    /// Zeroes the output layer, which makes every prediction uniform.
    pub fn zero_head(&mut self) {
        for i in [DENSE, DENSE + 1] {
            self.params.get_mut(i).value.data_mut().fill(0.0);
        }
    }
}

impl Network for HybridNet {
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
        let xt = tape.constant(time_major(x, n, c, t));
        let lstm = |i: usize| LstmVars { w_in: vars[i], w_rec: vars[i + 1], bias: vars[i + 2] };
        let gru = |i: usize| GruVars { w_in: vars[i], w_rec: vars[i + 1], b_in: vars[i + 2], b_rec: vars[i + 3] };
        let seq = bilstm_sequence(tape, xt, t, n, lstm(LSTM[0]), lstm(LSTM[1]))?;
        let seq = dropout_node(tape, seq, self.config.dropout, mode, rng)?;
        let fin = bigru_final(tape, seq, t, n, gru(GRU[0]), gru(GRU[1]))?;
        let fin = dropout_node(tape, fin, self.config.dropout, mode, rng)?;
        let logits = tape.matmul(fin, vars[DENSE])?;
        let logits = tape.add_row(logits, vars[DENSE + 1])?;
        let probs = tape.softmax_rows(logits)?;
        Ok(Forward { probs, norm_updates: Vec::new() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> HybridNet {
        HybridNet::new(HybridConfig { lstm_units: 4, gru_units: 3, ..Default::default() }, 3, 6, 1).unwrap()
    }

    #[test]
    fn time_major_layout() {
        // two windows, 2 channels × 3 samples
        let x: Vec<f64> = (0..12).map(f64::from).collect();
        let t = time_major(&x, 2, 2, 3);
        assert_eq!(t.shape(), &[6, 2]);
        // step 1 of sample 1: channels (6+1, 9+1)
        assert_eq!(t.at2(3, 0), 7.0);
        assert_eq!(t.at2(3, 1), 10.0);
    }

    #[test]
    fn zero_head_is_uniform() {
        let mut net = small();
        net.zero_head();
        let x: Vec<f64> = (0..36).map(|i| (i as f64 * 0.37).sin()).collect();
        for p in net.predict_proba(&x, 2).unwrap() {
            for v in p {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn outputs_are_on_the_simplex() {
        let net = small();
        let x: Vec<f64> = (0..54).map(|i| (i as f64 * 1.3).cos() * 4.0).collect();
        for p in net.predict_proba(&x, 3).unwrap() {
            assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn wrong_window_is_a_shape_error() {
        let net = small();
        assert!(matches!(net.predict_proba(&[0.0; 17], 1), Err(Error::Shape(_))));
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = HybridConfig { dropout: 1.0, ..Default::default() };
        assert!(matches!(HybridNet::new(cfg, 19, 200, 0), Err(Error::Config(_))));
    }

    #[test]
    fn full_loss_gradients_match_finite_differences() {
        use crate::numerics::gradcheck::check_network_loss;
        let net = small();
        let x: Vec<f64> = (0..36).map(|i| (i as f64 * 0.71).sin()).collect();
        let report = check_network_loss(&net, &x, &[0, 2], 1e-5, Some(6), 9).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
