//! Metrics for a fixed three-class confusion matrix.

use mibci::evaluation::{metrics, ConfusionMatrix};

fn main() -> mibci::Result<()> {
    let cm = ConfusionMatrix::from_counts(vec![vec![364, 5, 12], vec![34, 154, 5], vec![34, 14, 140]])?;
    let report = metrics(&cm, "xgboost")?;
    print!("{}", report.render());
    print!("{}", cm.to_csv());
    Ok(())
}
