//! Drives the simulated robot with a random class stream and logs the
//! motor-driver pin levels it would receive.

use rand::Rng as _;

use mibci::seed::rng_for;
use mibci::simulator::{run_simulation, LogSink, PinMap, Pose, SimParams};

fn main() -> mibci::Result<()> {
    let mut rng = rng_for(5, "example-stream");
    let preds: Vec<u8> = (0..40).map(|_| rng.gen_range(0..3)).collect();
    let mut sink = LogSink::new(Vec::new());
    let log = run_simulation(&preds, &SimParams::default(), Pose::default(), &PinMap::default(), Some(&mut sink))?;
    let p = log.final_pose();
    println!("final pose x {:.3} m, y {:.3} m, heading {:.3} rad", p.x, p.y, p.heading);
    println!("path length {:.2} m", log.path_length());
    let jsonl = String::from_utf8(sink.into_inner()).expect("utf-8 log");
    for line in jsonl.lines().take(3) {
        println!("{line}");
    }
    Ok(())
}
