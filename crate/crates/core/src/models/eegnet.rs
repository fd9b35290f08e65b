//! Compact convolutional network: temporal filters, depthwise spatial filters,
//! then a separable convolution, with batch normalisation and average pooling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::dropout::{dropout_node, Mode};
use crate::numerics::params::{glorot_uniform, Param, ParamSet};
use crate::numerics::tape::{NormStats, Tape, Var};
use crate::numerics::tensor::Tensor;
use crate::numerics::train::{Forward, Network, NormUpdate};
use crate::preprocess::N_CLASSES;
use crate::seed::{rng_for, Rng};

pub const BN_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EegNetConfig {
    /// Temporal filter count.
    pub f1: usize,
    /// Spatial filters per temporal filter.
    pub d: usize,
    /// Separable filter count; must equal `f1 · d`.
    pub f2: usize,
    pub kern_length: usize,
    pub separable_kernel: usize,
    pub pool1: usize,
    pub pool2: usize,
    pub dropout: f64,
    pub l2: f64,
}

impl Default for EegNetConfig {
    fn default() -> Self {
        Self { f1: 8, d: 2, f2: 16, kern_length: 64, separable_kernel: 16, pool1: 4, pool2: 8, dropout: 0.1, l2: 0.0 }
    }
}

impl EegNetConfig {
    pub fn validate(&self, samples: usize) -> Result<()> {
        if self.f1 == 0 || self.d == 0 || self.kern_length == 0 || self.separable_kernel == 0 {
            return Err(Error::Config("filter counts and kernel lengths must be positive".into()));
        }
        if self.f2 != self.f1 * self.d {
            return Err(Error::Config(format!("f2 = {} must equal f1·d = {}", self.f2, self.f1 * self.d)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::Config("l2 must be non-negative".into()));
        }
        if self.kern_length > samples {
            return Err(Error::Shape(format!("kernel length {} exceeds window length {samples}", self.kern_length)));
        }
        if self.pool1 == 0 || self.pool2 == 0 || samples / self.pool1 / self.pool2 == 0 {
            return Err(Error::Shape(format!("window of {samples} too short for pools {}·{}", self.pool1, self.pool2)));
        }
        if self.separable_kernel > samples / self.pool1 {
            return Err(Error::Shape("separable kernel longer than the pooled window".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Norm {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    conv1: usize,
    bn1: Norm,
    depthwise: usize,
    bn2: Norm,
    sep_depth: usize,
    sep_point: usize,
    bn3: Norm,
    dense_w: usize,
    dense_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EegNet {
    pub config: EegNetConfig,
    channels: usize,
    samples: usize,
    params: ParamSet,
    layout: Layout,
}

fn push_norm(params: &mut ParamSet, name: &str, n: usize) -> Norm {
    Norm {
        gamma: params.push(Param::weight(format!("{name}.gamma"), Tensor::filled(&[n], 1.0)).unregularized()),
        beta: params.push(Param::bias(format!("{name}.beta"), Tensor::zeros(&[n]))),
        mean: params.push(Param::buffer(format!("{name}.running_mean"), Tensor::zeros(&[n]))),
        var: params.push(Param::buffer(format!("{name}.running_var"), Tensor::filled(&[n], 1.0))),
    }
}

impl EegNet {
    pub fn new(config: EegNetConfig, channels: usize, samples: usize, seed: u64) -> Result<Self> {
        config.validate(samples)?;
        if channels == 0 {
            return Err(Error::Shape("no channels".into()));
        }
        let mut rng = rng_for(seed, "init");
        let EegNetConfig { f1, d, f2, kern_length: k, separable_kernel: k2, .. } = config;
        let flat = f2 * (samples / config.pool1 / config.pool2);
        let mut params = ParamSet::default();
        let conv1 = params.push(Param::weight("conv1.w", glorot_uniform(&[f1, k], k, k * f1, &mut rng)));
        let bn1 = push_norm(&mut params, "bn1", f1);
        let depthwise = params.push(Param::weight(
            "depthwise.w",
            glorot_uniform(&[f1 * d, channels], channels, channels * d, &mut rng),
        ));
        let bn2 = push_norm(&mut params, "bn2", f1 * d);
        let sep_depth = params.push(Param::weight("separable.depth_w", glorot_uniform(&[f1 * d, k2], k2, k2, &mut rng)));
        let sep_point = params.push(Param::weight("separable.point_w", glorot_uniform(&[f2, f1 * d], f1 * d, f2, &mut rng)));
        let bn3 = push_norm(&mut params, "bn3", f2);
        let dense_w = params.push(Param::weight("dense.w", glorot_uniform(&[flat, N_CLASSES], flat, N_CLASSES, &mut rng)));
        let dense_b = params.push(Param::bias("dense.b", Tensor::zeros(&[N_CLASSES])));
        let layout = Layout { conv1, bn1, depthwise, bn2, sep_depth, sep_point, bn3, dense_w, dense_b };
        Ok(Self { config, channels, samples, params, layout })
    }

    #[allow(clippy::too_many_arguments)]
    fn norm(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        n: Norm,
        mode: Mode,
        updates: &mut Vec<NormUpdate>,
    ) -> Result<Var> {
        let groups = self.params.get(n.gamma).value.len();
        let stats = match mode {
            Mode::Train => NormStats::Batch,
            Mode::Eval => NormStats::Running {
                mean: self.params.get(n.mean).value.data(),
                var: self.params.get(n.var).value.data(),
            },
        };
        let y = tape.batch_norm(x, vars[n.gamma], vars[n.beta], groups, BN_EPSILON, stats)?;
        if mode == Mode::Train {
            updates.push(NormUpdate { node: y, mean_param: n.mean, var_param: n.var });
        }
        Ok(y)
    }
}

impl Network for EegNet {
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
        let cfg = &self.config;
        let l = &self.layout;
        let mut updates = Vec::new();
        let input = tape.constant(Tensor::new(vec![n, c, t], x.to_vec())?);

        // temporal filters, each applied to every electrode: map f·C + ch
        let routes = (0..cfg.f1).flat_map(|f| (0..c).map(move |ch| (ch, f))).collect();
        let a = tape.conv_time(input, vars[l.conv1], routes)?;
        let a = self.norm(tape, vars, a, l.bn1, mode, &mut updates)?;

        // spatial filters across all electrodes of one temporal map
        let a = tape.mix_maps(a, vars[l.depthwise], cfg.f1)?;
        let a = self.norm(tape, vars, a, l.bn2, mode, &mut updates)?;
        let a = tape.elu(a);
        let a = tape.avg_pool_time(a, cfg.pool1)?;
        let a = dropout_node(tape, a, cfg.dropout, mode, rng)?;

        let maps = cfg.f1 * cfg.d;
        let a = tape.conv_time(a, vars[l.sep_depth], (0..maps).map(|m| (m, m)).collect())?;
        let a = tape.mix_maps(a, vars[l.sep_point], 1)?;
        let a = self.norm(tape, vars, a, l.bn3, mode, &mut updates)?;
        let a = tape.elu(a);
        let a = tape.avg_pool_time(a, cfg.pool2)?;
        let a = dropout_node(tape, a, cfg.dropout, mode, rng)?;

        let width = tape.value(a).len() / n;
        let flat = tape.reshape(a, vec![n, width])?;
        let logits = tape.matmul(flat, vars[l.dense_w])?;
        let logits = tape.add_row(logits, vars[l.dense_b])?;
        let probs = tape.softmax_rows(logits)?;
        Ok(Forward { probs, norm_updates: updates })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry() {
        let net = EegNet::new(EegNetConfig::default(), 19, 200, 0).unwrap();
        assert_eq!(net.params().by_name("dense.w").unwrap().value.shape(), &[96, 3]);
        assert_eq!(net.params().by_name("depthwise.w").unwrap().value.shape(), &[16, 19]);
    }

    #[test]
    fn simplex_output_in_both_modes() {
        let cfg = EegNetConfig { kern_length: 8, separable_kernel: 4, pool1: 2, pool2: 2, ..Default::default() };
        let net = EegNet::new(cfg, 3, 32, 5).unwrap();
        let x: Vec<f64> = (0..2 * 96).map(|i| (i as f64 * 0.71).sin() * 3.0).collect();
        for p in net.predict_proba(&x, 2).unwrap() {
            assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let mut tape = Tape::new();
        let vars = net.params().bind(&mut tape);
        let mut rng = rng_for(0, "t");
        let fwd = net.forward(&mut tape, &vars, &x, 2, Mode::Train, &mut rng).unwrap();
        assert_eq!(fwd.norm_updates.len(), 3);
        for row in tape.value(fwd.probs).data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_depthwise_reproduces_its_input_map() {
        // one group of 3 electrodes, D = 2: pick electrode 1, then electrode 2
        let mut tape = Tape::new();
        let x = Tensor::new(vec![1, 3, 5], (0..15).map(|i| i as f64 * 0.5 - 2.0).collect()).unwrap();
        let xv = tape.constant(x.clone());
        let w = tape.constant(Tensor::matrix(2, 3, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap());
        let y = tape.mix_maps(xv, w, 1).unwrap();
        assert_eq!(&tape.value(y).data()[..5], &x.data()[5..10]);
        assert_eq!(&tape.value(y).data()[5..], &x.data()[10..]);
    }

    #[test]
    fn rejects_short_windows_and_bad_filter_counts() {
        assert!(matches!(EegNet::new(EegNetConfig::default(), 19, 40, 0), Err(Error::Shape(_))));
        let cfg = EegNetConfig { f2: 12, ..Default::default() };
        assert!(matches!(EegNet::new(cfg, 19, 200, 0), Err(Error::Config(_))));
    }
}
