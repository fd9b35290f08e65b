use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::params::ParamSet;
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Bias-corrected Adam with one moment pair per trainable parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.value.len()]).collect::<Vec<_>>();
        Self { config, step: 0, first: zeros(), second: zeros() }
    }

    /// One update. `grads[i]` belongs to `params[i]`; `None` entries (frozen
    /// buffers) are skipped. A non-finite gradient aborts without touching
    /// any parameter.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if let Some(g) = g {
                if g.len() != p.value.len() {
                    return Err(Error::Shape(format!("gradient shape for {}", p.name)));
                }
                if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                    return Err(Error::Training(format!(
                        "non-finite gradient in {} at element {i} (step {})",
                        p.name,
                        self.step + 1
                    )));
                }
            }
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let gj = g.data()[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Rescales gradients in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(|g| g.sum_squares())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::params::Param;

    fn single(w: f64) -> ParamSet {
        let mut ps = ParamSet::default();
        ps.push(Param::weight("w", Tensor::scalar(w)));
        ps
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut ps = single(1.25);
        let mut adam = AdamState::new(AdamConfig::default(), &ps);
        for _ in 0..5 {
            adam.step(&mut ps, &[Some(Tensor::scalar(0.0))]).unwrap();
        }
        assert_eq!(ps.get(0).value.data()[0], 1.25);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut ps = single(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &ps);
        adam.step(&mut ps, &[Some(Tensor::scalar(1.0))]).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = lr · 1/(1 + 1e-8)
        let expected = -1e-4 / (1.0 + 1e-8);
        assert!((ps.get(0).value.data()[0] - expected).abs() < 1e-18);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn converges_on_a_parabola() {
        let mut ps = single(0.0);
        let mut adam = AdamState::new(AdamConfig { learning_rate: 0.1, ..Default::default() }, &ps);
        for _ in 0..200 {
            let w = ps.get(0).value.data()[0];
            adam.step(&mut ps, &[Some(Tensor::scalar(2.0 * (w - 3.0)))]).unwrap();
        }
        assert!((ps.get(0).value.data()[0] - 3.0).abs() < 0.1);
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut ps = single(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &ps);
        let err = adam.step(&mut ps, &[Some(Tensor::scalar(f64::NAN))]).unwrap_err();
        assert!(matches!(err, Error::Training(_)));
        assert_eq!(ps.get(0).value.data()[0], 1.0);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![Some(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap()), None];
        let before = clip_global_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        let d = g[0].as_ref().unwrap().data();
        assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
    }
}
