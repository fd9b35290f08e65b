//! Cuts a synthetic recording into labeled windows and prints the C3 ERP
//! for each class every 100 ms.
//!
//! cargo run --example segment_planted

use mibci::config::DataConfig;
use mibci::pipeline::{class_erps, resolve_channel, retained_channels, segment};
use mibci::preprocess::{detect_onsets, flatten};
use mibci::synth::{planted_recording, PLANTED_RATE_HZ};

fn main() -> mibci::Result<()> {
    let planted = planted_recording("demo", 10, 20.0, 1)?;
    let events = detect_onsets(planted.recording.marker(), PLANTED_RATE_HZ);
    println!("{} marker runs, first at sample {}", events.len(), planted.onsets[0]);

    let cfg = DataConfig::default();
    let (ds, summaries) = segment(&[planted.recording], &cfg, 42)?;
    let fm = flatten(&ds)?;
    println!("{} windows, {} feature columns, class counts {:?}", fm.n_rows(), fm.n_cols(), ds.class_counts());
    println!("rest requested {}, drawn {}", summaries[0].rest_requested, summaries[0].rest_epochs);

    let names = retained_channels(&cfg.exclude_channels);
    let c3 = resolve_channel("C3", &names, fm.n_channels)?;
    let erps = class_erps(&ds, c3)?;
    println!("t_s    rest     right    left");
    for t in (0..cfg.window_len).step_by(20) {
        let v: Vec<String> = erps.iter().map(|e| e.as_ref().map_or("-".into(), |e| format!("{:7.2}", e[t]))).collect();
        println!("{:.2}  {}", t as f64 / PLANTED_RATE_HZ, v.join("  "));
    }
    Ok(())
}
