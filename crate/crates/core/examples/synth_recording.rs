//! Writes a synthetic 22-channel EEGREC1 recording with planted imagery runs,
//! handy for trying the command line without the real data.
//!
//! cargo run --example synth_recording -- out.eegrec [per_class] [seed]

use mibci::recording::save_recording;
use mibci::synth::planted_recording;

fn main() -> mibci::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "planted.eegrec".into());
    let per_class = args.next().and_then(|v| v.parse().ok()).unwrap_or(10);
    let seed = args.next().and_then(|v| v.parse().ok()).unwrap_or(1);
    let planted = planted_recording("planted", per_class, 20.0, seed)?;
    save_recording(&planted.recording, &path)?;
    println!("wrote {path}: {} samples, onsets {:?}", planted.recording.n_samples(), planted.onsets);
    Ok(())
}
