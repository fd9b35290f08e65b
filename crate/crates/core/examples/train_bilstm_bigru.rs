//! Overfits the BiLSTM-BiGRU hybrid on 60 synthetic, class-separable windows.
//!
//! cargo run --release --example train_bilstm_bigru

use std::time::Instant;

use mibci::models::{train_model, Architecture, ModelSpec};
use mibci::numerics::TrainConfig;
use mibci::synth::separable_epochs;

fn main() -> mibci::Result<()> {
    let data = separable_epochs(20, 19, 200, 1.0, 1.0, 7);
    let cfg = TrainConfig { max_epochs: std::env::var("EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(60), ..Default::default() };
    let start = Instant::now();
    let out = train_model(&ModelSpec::default_for(Architecture::BilstmBigru), &data, &cfg)?;
    for r in &out.fit.as_ref().unwrap().history {
        println!(
            "epoch {:>3}  loss {:.4}  acc {:.3}  val_loss {:.4}  val_acc {:.3}",
            r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy
        );
    }
    let pred = out.model.model.predict(&data.x, data.n_rows())?;
    let acc = pred.iter().zip(&data.y).filter(|(p, y)| p == y).count() as f64 / data.n_rows() as f64;
    println!("training accuracy {acc:.3} in {:.1?}", start.elapsed());
    Ok(())
}
