//! Seeded synthetic data for tests, examples and smoke runs.

use rand::Rng as _;

use crate::error::Result;
use crate::preprocess::{FeatureMatrix, N_CLASSES};
use crate::recording::{Recording, RecordingMetadata, SOURCE_CHANNELS};
use crate::seed::rng_for;

/// `n_per_class` windows per class, interleaved by label. Class `k` lifts
/// every channel `c` with `c % 3 == k` by `offset`; all values carry uniform
/// noise in `±noise`.
pub fn separable_epochs(
    n_per_class: usize,
    channels: usize,
    samples: usize,
    offset: f64,
    noise: f64,
    seed: u64,
) -> FeatureMatrix {
    let mut rng = rng_for(seed, "synthetic-epochs");
    let n = n_per_class * N_CLASSES;
    let mut x = Vec::with_capacity(n * channels * samples);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % N_CLASSES;
        for c in 0..channels {
            let lift = if c % N_CLASSES == label { offset } else { 0.0 };
            for _ in 0..samples {
                x.push(lift + rng.gen_range(-noise..=noise));
            }
        }
        y.push(label as u8);
    }
    FeatureMatrix::new(channels, samples, x, y).expect("consistent synthetic shape")
}

/// A 22-channel, 200 Hz recording laid out as in the source data.
#[derive(Debug, Clone)]
pub struct PlantedRecording {
    pub recording: Recording,
    /// Onset sample indices in order, alternating right (1) and left (2).
    pub onsets: Vec<usize>,
}

pub const PLANTED_RATE_HZ: f64 = 200.0;
const SLOT: usize = 800;
const LEAD: usize = 200;
const RUN: usize = 200;

/// Plants `per_class` right-hand and `per_class` left-hand imagery runs, each
/// a 1 s marker run inside its own 4 s slot, followed by a marker-silent tail
/// long enough for `2 · per_class` rest windows of 1 s with 1 s guards.
///
/// During a run, C3 (right hand) or C4 (left hand) carries a +`amplitude` µV
/// shift over background noise of ±5 µV.
pub fn planted_recording(id: &str, per_class: usize, amplitude: f64, seed: u64) -> Result<PlantedRecording> {
    let mut rng = rng_for(seed, "synthetic-recording");
    let events = 2 * per_class;
    let n = events * SLOT + (2 * per_class) * 2 * RUN + 2 * LEAD;
    let nch = SOURCE_CHANNELS.len();
    let c3 = SOURCE_CHANNELS.iter().position(|&c| c == "C3").unwrap();
    let c4 = SOURCE_CHANNELS.iter().position(|&c| c == "C4").unwrap();
    let mut data: Vec<f64> = (0..n * nch).map(|_| rng.gen_range(-5.0..=5.0)).collect();
    let mut marker = vec![0i32; n];
    let mut onsets = Vec::with_capacity(events);
    for e in 0..events {
        let code = if e % 2 == 0 { 1 } else { 2 };
        let onset = e * SLOT + LEAD;
        onsets.push(onset);
        marker[onset..onset + RUN].fill(code);
        let ch = if code == 1 { c3 } else { c4 };
        for t in onset..onset + RUN {
            data[t * nch + ch] += amplitude;
        }
    }
    let meta = RecordingMetadata {
        id: id.to_string(),
        n_samples: n,
        sample_rate_hz: PLANTED_RATE_HZ,
        channel_names: SOURCE_CHANNELS.iter().map(|s| s.to_string()).collect(),
    };
    Ok(PlantedRecording { recording: Recording::new(meta, data, marker)?, onsets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::detect_onsets;

    #[test]
    fn planted_onsets_are_detected() {
        let p = planted_recording("s", 10, 20.0, 1).unwrap();
        let found: Vec<usize> = detect_onsets(p.recording.marker(), 200.0).iter().map(|e| e.sample_index).collect();
        assert_eq!(found, p.onsets);
    }

    #[test]
    fn epochs_are_balanced_and_seeded() {
        let a = separable_epochs(4, 5, 7, 2.0, 0.5, 3);
        assert_eq!(a.class_counts(), [4, 4, 4]);
        assert_eq!(a, separable_epochs(4, 5, 7, 2.0, 0.5, 3));
    }
}
