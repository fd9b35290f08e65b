//! Stratified 10-fold cross-validation of logistic regression on synthetic
//! windows, folds run on four threads.
//!
//! cargo run --release --example crossval -- gbt

use mibci::evaluation::cross_validate;
use mibci::models::{Architecture, ModelSpec};
use mibci::numerics::TrainConfig;
use mibci::synth::separable_epochs;

fn main() -> mibci::Result<()> {
    let arch: Architecture = std::env::args().nth(1).as_deref().unwrap_or("logreg").parse()?;
    let data = separable_epochs(20, 19, 50, 0.08, 1.0, 3);
    let train = TrainConfig { max_epochs: 30, ..Default::default() };
    let cv = cross_validate(&ModelSpec::default_for(arch), &data, 10, true, &train, 4)?;
    print!("{}", cv.render());
    Ok(())
}
