//! Finite-difference check of the full BiLSTM-BiGRU training loss on a
//! two-window batch.

use mibci::models::{HybridConfig, HybridNet};
use mibci::numerics::check_network_loss;

fn main() -> mibci::Result<()> {
    let net = HybridNet::new(HybridConfig { lstm_units: 8, gru_units: 6, ..Default::default() }, 4, 10, 3)?;
    let x: Vec<f64> = (0..80).map(|i| (i as f64 * 0.37).sin()).collect();
    let report = check_network_loss(&net, &x, &[1, 2], 1e-5, Some(20), 7)?;
    println!("checked {} entries, max relative error {:.2e}", report.checked, report.max_rel_error);
    if let Some((input, elem, a, n)) = report.worst {
        println!("worst: param {input} element {elem}, analytic {a:.6e}, numeric {n:.6e}");
    }
    Ok(())
}
