//! Multinomial logistic regression on standardised flattened windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::gemm;
use crate::preprocess::{FeatureMatrix, N_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogregConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
}

impl Default for LogregConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, iterations: 500, l2: 1e-4 }
    }
}

impl LogregConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::Config("learning_rate must be positive and l2 non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogReg {
    pub config: LogregConfig,
    /// Per-feature centring and scaling applied before the linear map.
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `d × 3`, row-major.
    pub weight: Vec<f64>,
    pub bias: [f64; N_CLASSES],
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    row.iter_mut().for_each(|v| *v /= z);
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

impl LogReg {
    /// All-zero model over `d` features with identity standardisation.
    pub fn zeros(d: usize, config: LogregConfig) -> Self {
        Self { config, mean: vec![0.0; d], scale: vec![1.0; d], weight: vec![0.0; d * N_CLASSES], bias: [0.0; N_CLASSES] }
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn fit(data: &FeatureMatrix, config: &LogregConfig) -> Result<Self> {
        config.validate()?;
        let (n, d) = (data.n_rows(), data.n_cols());
        if n == 0 {
            return Err(Error::Data("no rows to fit".into()));
        }
        if data.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature value".into()));
        }
        let mut model = Self::zeros(d, config.clone());
        for j in 0..d {
            let mean = (0..n).map(|i| data.x[i * d + j]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (data.x[i * d + j] - mean).powi(2)).sum::<f64>() / n as f64;
            model.mean[j] = mean;
            model.scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        let z = model.standardize(&data.x, n)?;
        for _ in 0..config.iterations {
            let (_, gw, gb) = model.loss_and_gradient_std(&z, &data.y)?;
            for (w, g) in model.weight.iter_mut().zip(&gw) {
                *w -= config.learning_rate * g;
            }
            for k in 0..N_CLASSES {
                model.bias[k] -= config.learning_rate * gb[k];
            }
        }
        Ok(model)
    }

    fn standardize(&self, x: &[f64], n: usize) -> Result<Vec<f64>> {
        let d = self.n_features();
        if x.len() != n * d {
            return Err(Error::Shape(format!("expected {n} rows of {d} features, got {} values", x.len())));
        }
        let mut z = x.to_vec();
        for row in z.chunks_exact_mut(d.max(1)) {
            for j in 0..d {
                row[j] = (row[j] - self.mean[j]) / self.scale[j];
            }
        }
        Ok(z)
    }

    fn probs_std(&self, z: &[f64], n: usize) -> Vec<f64> {
        let d = self.n_features();
        let mut p = vec![0.0; n * N_CLASSES];
        gemm(n, d, N_CLASSES, z, false, &self.weight, false, &mut p, false);
        for row in p.chunks_exact_mut(N_CLASSES) {
            for k in 0..N_CLASSES {
                row[k] += self.bias[k];
            }
            softmax_in_place(row);
        }
        p
    }

    fn loss_and_gradient_std(&self, z: &[f64], y: &[u8]) -> Result<(f64, Vec<f64>, [f64; N_CLASSES])> {
        let n = y.len();
        let d = self.n_features();
        let mut p = self.probs_std(z, n);
        let mut loss = 0.0;
        for (i, &l) in y.iter().enumerate() {
            let l = l as usize;
            if l >= N_CLASSES {
                return Err(Error::Label(format!("label {l} outside 0..{N_CLASSES}")));
            }
            loss -= p[i * N_CLASSES + l].max(1e-12).ln();
            p[i * N_CLASSES + l] -= 1.0;
        }
        loss /= n as f64;
        loss += self.config.l2 * self.weight.iter().map(|w| w * w).sum::<f64>();
        let inv = 1.0 / n as f64;
        p.iter_mut().for_each(|v| *v *= inv);
        let mut gw = vec![0.0; d * N_CLASSES];
        gemm(d, n, N_CLASSES, z, true, &p, false, &mut gw, false);
        for (g, w) in gw.iter_mut().zip(&self.weight) {
            *g += 2.0 * self.config.l2 * w;
        }
        let mut gb = [0.0; N_CLASSES];
        for row in p.chunks_exact(N_CLASSES) {
            for k in 0..N_CLASSES {
                gb[k] += row[k];
            }
        }
        Ok((loss, gw, gb))
    }

    /// Training objective (mean cross-entropy + `l2·Σw²`) on raw rows, with
    /// its gradient with respect to the weights and biases.
    pub fn loss_and_gradient(&self, x: &[f64], y: &[u8]) -> Result<(f64, Vec<f64>, [f64; N_CLASSES])> {
        let z = self.standardize(x, y.len())?;
        self.loss_and_gradient_std(&z, y)
    }

    pub fn predict_proba(&self, x: &[f64], n: usize) -> Result<Vec<[f64; N_CLASSES]>> {
        let z = self.standardize(x, n)?;
        Ok(self.probs_std(&z, n).chunks_exact(N_CLASSES).map(|r| [r[0], r[1], r[2]]).collect())
    }

    pub fn predict(&self, x: &[f64], n: usize) -> Result<Vec<u8>> {
        Ok(self.predict_proba(x, n)?.iter().map(|p| argmax(p) as u8).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_one_feature() {
        let x = vec![-3.0, -2.5, -2.0, 2.0, 2.5, 3.0];
        let fm = FeatureMatrix::new(1, 1, x.clone(), vec![0, 0, 0, 1, 1, 1]).unwrap();
        let m = LogReg::fit(&fm, &LogregConfig::default()).unwrap();
        assert_eq!(m.predict(&x, 6).unwrap(), fm.y);
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let m = LogReg::zeros(4, LogregConfig::default());
        let x: Vec<f64> = (0..20).map(|i| i as f64 - 7.0).collect();
        assert_eq!(m.predict(&x, 5).unwrap(), vec![0; 5]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = vec![0.3, -1.2, 2.0, 0.5, -0.7, 1.1, 0.0, 0.4, 1.5, -2.0];
        let y = vec![0, 2, 1, 1, 0];
        let mut m = LogReg::zeros(2, LogregConfig { l2: 0.05, ..Default::default() });
        m.weight = vec![0.2, -0.4, 0.1, 0.7, 0.3, -0.5];
        m.bias = [0.1, -0.2, 0.05];
        let (_, gw, gb) = m.loss_and_gradient(&x, &y).unwrap();
        let h = 1e-5;
        for j in 0..6 {
            let mut up = m.clone();
            up.weight[j] += h;
            let mut dn = m.clone();
            dn.weight[j] -= h;
            let fd = (up.loss_and_gradient(&x, &y).unwrap().0 - dn.loss_and_gradient(&x, &y).unwrap().0) / (2.0 * h);
            assert!((fd - gw[j]).abs() / fd.abs().max(gw[j].abs()).max(1e-8) < 1e-6, "w{j}: {fd} {}", gw[j]);
        }
        for k in 0..3 {
            let mut up = m.clone();
            up.bias[k] += h;
            let mut dn = m.clone();
            dn.bias[k] -= h;
            let fd = (up.loss_and_gradient(&x, &y).unwrap().0 - dn.loss_and_gradient(&x, &y).unwrap().0) / (2.0 * h);
            assert!((fd - gb[k]).abs() / fd.abs().max(gb[k].abs()).max(1e-8) < 1e-6);
        }
    }

    #[test]
    fn non_finite_features_rejected() {
        let fm = FeatureMatrix::new(1, 1, vec![f64::NAN, 1.0], vec![0, 1]).unwrap();
        assert!(matches!(LogReg::fit(&fm, &LogregConfig::default()), Err(Error::Data(_))));
    }
}
