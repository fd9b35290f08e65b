use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;
use crate::seed::{rng_for, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!("dropout rate {rate} not in [0, 1)")));
    }
    Ok(())
}

fn mask(n: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect()
}

/// Inverted dropout: in training, zero each element with probability `rate`
/// and scale survivors by `1/(1-rate)`; identity in evaluation.
pub fn dropout(x: &Tensor, rate: f64, mode: Mode, seed: u64) -> Result<Tensor> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x.clone());
    }
    let m = mask(x.len(), rate, &mut rng_for(seed, "dropout"));
    let data = x.data().iter().zip(&m).map(|(v, k)| v * k).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Tape version drawing its mask from a running stream.
pub fn dropout_node(tape: &mut Tape, x: Var, rate: f64, mode: Mode, rng: &mut Rng) -> Result<Var> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let m = mask(tape.value(x).len(), rate, rng);
    tape.mask_mul(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_and_eval_are_identity() {
        let x = Tensor::new(vec![4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(dropout(&x, 0.0, Mode::Train, 1).unwrap(), x);
        assert_eq!(dropout(&x, 0.7, Mode::Eval, 1).unwrap(), x);
    }

    #[test]
    fn expectation_is_preserved() {
        let x = Tensor::filled(&[100_000], 1.0);
        let y = dropout(&x, 0.2, Mode::Train, 11).unwrap();
        let mean = y.data().iter().sum::<f64>() / 1e5;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        assert_eq!(y, dropout(&x, 0.2, Mode::Train, 11).unwrap());
    }

    #[test]
    fn rate_one_rejected() {
        let x = Tensor::scalar(1.0);
        assert!(matches!(dropout(&x, 1.0, Mode::Train, 0), Err(Error::Parameter(_))));
    }
}
