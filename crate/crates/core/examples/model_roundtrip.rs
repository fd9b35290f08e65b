//! Trains a boosted-tree model, writes it to disk and checks the reloaded
//! copy predicts identically.

use mibci::models::{load_model, save_model, train_model, Architecture, GbtConfig, ModelSpec};
use mibci::numerics::TrainConfig;
use mibci::synth::separable_epochs;

fn main() -> mibci::Result<()> {
    let data = separable_epochs(15, 19, 40, 0.8, 1.0, 2);
    let spec = ModelSpec::from_parts(Architecture::Gbt, serde_json::to_value(GbtConfig { n_estimators: 50, ..Default::default() }).unwrap())?;
    let out = train_model(&spec, &data, &TrainConfig::default())?;
    let path = std::env::temp_dir().join("mibci-example.miw");
    save_model(&out.model, &path)?;
    let back = load_model(&path)?;
    let a = out.model.model.predict(&data.x, data.n_rows())?;
    let b = back.model.predict(&data.x, data.n_rows())?;
    println!("saved {} ({} bytes), config hash {}", path.display(), std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0), &back.config_hash[..12]);
    println!("predictions identical after reload: {}", a == b);
    Ok(())
}
