use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// Trainable and included in the L2 penalty.
    Weight,
    /// Trainable, never penalised.
    Bias,
    /// Not trained by the optimizer (running statistics).
    Buffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    /// Whether this weight contributes to the L2 penalty.
    pub regularized: bool,
    pub value: Tensor,
}

impl Param {
    pub fn weight(name: impl Into<String>, value: Tensor) -> Self {
        Self { name: name.into(), kind: ParamKind::Weight, regularized: true, value }
    }

    pub fn bias(name: impl Into<String>, value: Tensor) -> Self {
        Self { name: name.into(), kind: ParamKind::Bias, regularized: false, value }
    }

    pub fn buffer(name: impl Into<String>, value: Tensor) -> Self {
        Self { name: name.into(), kind: ParamKind::Buffer, regularized: false, value }
    }

    pub fn unregularized(mut self) -> Self {
        self.regularized = false;
        self
    }

    pub fn trainable(&self) -> bool {
        self.kind != ParamKind::Buffer
    }
}

/// Ordered, named parameter collection. Models refer to entries by index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn push(&mut self, p: Param) -> usize {
        self.params.push(p);
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param> {
        self.params.iter_mut()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn n_trainable_values(&self) -> usize {
        self.params.iter().filter(|p| p.trainable()).map(|p| p.value.len()).sum()
    }

    /// Puts every parameter on the tape: trainables as tracked leaves, buffers as constants.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if p.trainable() { tape.param(p.value.clone()) } else { tape.constant(p.value.clone()) })
            .collect()
    }

    /// Replaces values with those from `other`, which must have identical names and shapes.
    pub fn load_values(&mut self, other: &ParamSet) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Format { offset: 0, msg: "parameter count mismatch".into() });
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Format {
                    offset: 0,
                    msg: format!("parameter {} does not match {} {:?}", a.name, b.name, b.value.shape()),
                });
            }
            a.value = b.value.clone();
        }
        Ok(())
    }
}

/// `coefficient · Σ w²` over regularized weights.
pub fn l2_penalty(params: &ParamSet, coefficient: f64) -> f64 {
    if coefficient == 0.0 {
        return 0.0;
    }
    coefficient
        * params
            .iter()
            .filter(|p| p.kind == ParamKind::Weight && p.regularized)
            .map(|p| p.value.sum_squares())
            .sum::<f64>()
}

/// Tape version of [`l2_penalty`]; `None` when nothing is penalised.
pub fn l2_penalty_node(tape: &mut Tape, params: &ParamSet, vars: &[Var], coefficient: f64) -> Result<Option<Var>> {
    if coefficient == 0.0 {
        return Ok(None);
    }
    let mut total: Option<Var> = None;
    for (p, &v) in params.iter().zip(vars) {
        if p.kind == ParamKind::Weight && p.regularized {
            let sq = tape.sum_squares(v);
            total = Some(match total {
                None => sq,
                Some(t) => tape.add(t, sq)?,
            });
        }
    }
    Ok(total.map(|t| tape.scale(t, coefficient)))
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;

    #[test]
    fn penalty_excludes_biases() {
        let mut ps = ParamSet::default();
        ps.push(Param::weight("w", Tensor::scalar(2.0)));
        ps.push(Param::bias("b", Tensor::scalar(100.0)));
        assert_eq!(l2_penalty(&ps, 0.0), 0.0);
        assert!((l2_penalty(&ps, 0.01) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn penalty_matches_brute_force() {
        let mut rng = rng_for(3, "t");
        let mut ps = ParamSet::default();
        let mut brute = 0.0;
        for i in 0..4 {
            let t = glorot_uniform(&[3, i + 1], 3, i + 1, &mut rng);
            for v in t.data() {
                brute += v * v;
            }
            ps.push(Param::weight(format!("w{i}"), t));
            ps.push(Param::bias(format!("b{i}"), Tensor::filled(&[i + 1], 5.0)));
        }
        assert!((l2_penalty(&ps, 0.05) - 0.05 * brute).abs() < 1e-12);
        let mut tape = Tape::new();
        let vars = ps.bind(&mut tape);
        let node = l2_penalty_node(&mut tape, &ps, &vars, 0.05).unwrap().unwrap();
        assert!((tape.value(node).data()[0] - 0.05 * brute).abs() < 1e-12);
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = rng_for(1, "t");
        let t = glorot_uniform(&[10, 20], 10, 20, &mut rng);
        let lim = (6.0f64 / 30.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= lim));
    }
}
