//! Magnitude response of the default 0.53 Hz Butterworth high-pass, and its
//! effect on a drifting 10 Hz tone.

use mibci::preprocess::{HighPass, DEFAULT_FILTER_ORDER, DEFAULT_HIGHPASS_HZ};

fn main() -> mibci::Result<()> {
    let fs = 200.0;
    let hp = HighPass::butterworth(DEFAULT_HIGHPASS_HZ, DEFAULT_FILTER_ORDER, fs)?;
    for f in [0.05, 0.1, 0.25, 0.53, 1.0, 2.0, 10.0, 50.0] {
        println!("{f:6.2} Hz  |H| = {:.4}", hp.magnitude(f, fs));
    }

    let x: Vec<f64> = (0..4000)
        .map(|i| {
            let t = i as f64 / fs;
            30.0 + 2.0 * t + (2.0 * std::f64::consts::PI * 10.0 * t).sin()
        })
        .collect();
    let y = hp.filtfilt(&x);
    let mid = &y[1000..3000];
    let mean = mid.iter().sum::<f64>() / mid.len() as f64;
    let peak = mid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("after zero-phase filtering: mean {mean:.4}, peak {peak:.3}");
    Ok(())
}
