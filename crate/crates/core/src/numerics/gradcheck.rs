//! Central finite-difference checks of tape gradients.

use rand::seq::index::sample;

use crate::error::Result;
use crate::numerics::dropout::Mode;
use crate::numerics::tape::{Tape, Var};
use crate::numerics::train::{batch_loss, Network};
use crate::numerics::tensor::Tensor;
use crate::seed::rng_for;

/// Denominator floor for the relative error, so entries whose true gradient
/// is zero are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(input index, element index, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences with step `h`.
///
/// Each tensor in `inputs` becomes a tracked leaf. With `max_per_input`, at
/// most that many elements per input are probed, chosen by `seed`.
pub fn check_gradients<F>(
    inputs: &[Tensor],
    f: F,
    h: f64,
    max_per_input: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut rng = rng_for(seed, "gradcheck");
    let mut report = GradCheckReport { checked: 0, max_rel_error: 0.0, worst: None };
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        let picks: Vec<usize> = match max_per_input {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let analytic = grads.get(vars[i]);
        for j in picks {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.map_or(0.0, |g| g.data()[j]);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((i, j, a, numeric));
            }
        }
    }
    Ok(report)
}

/// Gradient check of a network's full training objective (cross-entropy plus
/// L2) on the rows of `x`, in evaluation mode so dropout is inactive. Only
/// trainable parameters are probed.
pub fn check_network_loss<N: Network>(
    net: &N,
    x: &[f64],
    labels: &[usize],
    h: f64,
    max_per_input: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport> {
    let params = net.params();
    let trainable: Vec<usize> = (0..params.len()).filter(|&i| params.get(i).trainable()).collect();
    let inputs: Vec<Tensor> = trainable.iter().map(|&i| params.get(i).value.clone()).collect();
    check_gradients(
        &inputs,
        |tape, tracked| {
            let mut next = tracked.iter();
            let vars: Vec<Var> = params
                .iter()
                .map(|p| if p.trainable() { *next.next().unwrap() } else { tape.constant(p.value.clone()) })
                .collect();
            let mut rng = rng_for(seed, "gradcheck-net");
            Ok(batch_loss(net, tape, &vars, x, labels, Mode::Eval, &mut rng)?.0)
        },
        h,
        max_per_input,
        seed,
    )
}

