//! Overfit check: trains one architecture on 60 separable synthetic windows
//! until it fits them, then reports eval-mode training accuracy.
//!
//! cargo run --release --example overfit -- eegnet

use std::time::Instant;

use mibci::models::{train_model, Architecture, ModelSpec};
use mibci::numerics::TrainConfig;
use mibci::synth::separable_epochs;

fn main() -> mibci::Result<()> {
    let arch: Architecture = std::env::args().nth(1).as_deref().unwrap_or("logreg").parse()?;
    let data = separable_epochs(20, 19, 200, 1.0, 1.0, 7);
    let cfg = TrainConfig {
        max_epochs: 200,
        patience: 200,
        target_train_accuracy: Some(1.0),
        ..Default::default()
    };
    let start = Instant::now();
    let out = train_model(&ModelSpec::default_for(arch), &data, &cfg)?;
    if let Some(fit) = &out.fit {
        let last = fit.history.last().unwrap();
        println!("stopped after {} epochs, last train loss {:.4}", fit.stopped_epoch, last.train_loss);
    }
    let pred = out.model.model.predict(&data.x, data.n_rows())?;
    let acc = pred.iter().zip(&data.y).filter(|(p, y)| p == y).count() as f64 / data.n_rows() as f64;
    println!("{arch}: training accuracy {acc:.3} in {:.1?}", start.elapsed());
    Ok(())
}
