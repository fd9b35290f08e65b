//! Onset detection, epoch extraction, rest sampling and ERP averaging.

use std::collections::BTreeSet;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recording::Recording;
use crate::seed::rng_for;

pub const EPOCH_CHANNELS: usize = 19;
pub const EPOCH_SAMPLES: usize = 200;

pub const LABEL_REST: u8 = 0;
pub const LABEL_RIGHT: u8 = 1;
pub const LABEL_LEFT: u8 = 2;

/// Onset of a right- (code 1) or left-hand (code 2) imagery run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerEvent {
    pub sample_index: usize,
    pub code: u8,
    pub time_s: f64,
}

/// One event per maximal run of 1s or 2s that is preceded by a 0 (or starts
/// the stream). Any other code is ignored.
pub fn detect_onsets(marker: &[i32], sample_rate_hz: f64) -> Vec<MarkerEvent> {
    let mut events = Vec::new();
    for (i, &m) in marker.iter().enumerate() {
        if !(m == 1 || m == 2) {
            continue;
        }
        if i == 0 || marker[i - 1] == 0 {
            events.push(MarkerEvent {
                sample_index: i,
                code: m as u8,
                time_s: i as f64 / sample_rate_hz,
            });
        }
    }
    events
}

/// A labeled `channels × samples` window, channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub label: u8,
    pub n_channels: usize,
    pub n_samples: usize,
    pub window: Vec<f64>,
    pub origin: (String, usize),
}

impl Epoch {
    pub fn new(
        label: u8,
        n_channels: usize,
        n_samples: usize,
        window: Vec<f64>,
        origin: (String, usize),
    ) -> Result<Self> {
        if label > LABEL_LEFT {
            return Err(Error::Label(format!("epoch label {label} not in {{0,1,2}}")));
        }
        if window.len() != n_channels * n_samples {
            return Err(Error::Shape(format!(
                "window has {} values, expected {n_channels} × {n_samples}",
                window.len()
            )));
        }
        if window.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("epoch window contains non-finite values".into()));
        }
        Ok(Self { label, n_channels, n_samples, window, origin })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_channels, self.n_samples)
    }

    pub fn channel_row(&self, channel: usize) -> &[f64] {
        &self.window[channel * self.n_samples..(channel + 1) * self.n_samples]
    }
}

fn window_at(rec: &Recording, start: usize, len: usize) -> Vec<f64> {
    let n_ch = rec.n_channels();
    let mut window = vec![0.0; n_ch * len];
    for k in 0..len {
        for c in 0..n_ch {
            window[c * len + k] = rec.sample(start + k, c);
        }
    }
    window
}

/// Cuts `[onset, onset + window_len)` from a 19-channel recording.
pub fn extract_epoch(rec: &Recording, onset: &MarkerEvent, window_len: usize) -> Result<Epoch> {
    if rec.n_channels() != EPOCH_CHANNELS {
        return Err(Error::Shape(format!(
            "epoching expects {EPOCH_CHANNELS} channels, recording has {}",
            rec.n_channels()
        )));
    }
    let end = onset.sample_index + window_len;
    if end > rec.n_samples() {
        return Err(Error::Bounds(format!(
            "window [{}, {end}) overruns recording of {} samples",
            onset.sample_index,
            rec.n_samples()
        )));
    }
    Epoch::new(
        onset.code,
        EPOCH_CHANNELS,
        window_len,
        window_at(rec, onset.sample_index, window_len),
        (rec.id().to_string(), onset.sample_index),
    )
}

/// Extracts every event that fits, in event order. Overrunning events are skipped.
pub fn extract_epochs(rec: &Recording, events: &[MarkerEvent], window_len: usize) -> Result<Vec<Epoch>> {
    let mut out = Vec::with_capacity(events.len());
    for ev in events {
        match extract_epoch(rec, ev, window_len) {
            Ok(e) => out.push(e),
            Err(Error::Bounds(msg)) => warn!("skipping event: {msg}"),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RestSample {
    pub epochs: Vec<Epoch>,
    /// Set when fewer than the requested number of windows were available.
    pub shortfall: bool,
}

/// Samples non-overlapping label-0 windows from marker-silent stretches that
/// keep at least `guard_s` seconds between the window and every event onset.
/// Returned windows are ordered by start sample.
pub fn sample_rest_epochs(
    rec: &Recording,
    events: &[MarkerEvent],
    count: usize,
    window_len: usize,
    guard_s: f64,
    seed: u64,
) -> Result<RestSample> {
    if !(guard_s >= 0.0 && guard_s.is_finite()) {
        return Err(Error::Parameter(format!("guard_s must be >= 0, got {guard_s}")));
    }
    if rec.n_channels() != EPOCH_CHANNELS {
        return Err(Error::Shape(format!(
            "epoching expects {EPOCH_CHANNELS} channels, recording has {}",
            rec.n_channels()
        )));
    }
    if count == 0 {
        return Ok(RestSample { epochs: Vec::new(), shortfall: false });
    }
    let n = rec.n_samples();
    if n < window_len {
        return Ok(RestSample { epochs: Vec::new(), shortfall: true });
    }
    let guard = (guard_s * rec.sample_rate_hz()).ceil() as usize;

    // Eligible starts: marker silent over the window, and no onset within
    // `guard` samples of either end.
    let marker = rec.marker();
    let mut nonzero_prefix = vec![0usize; n + 1];
    for (i, &m) in marker.iter().enumerate() {
        nonzero_prefix[i + 1] = nonzero_prefix[i] + usize::from(m != 0);
    }
    let onsets: Vec<usize> = events.iter().map(|e| e.sample_index).collect();
    let mut candidates: Vec<usize> = (0..=n - window_len)
        .filter(|&s| nonzero_prefix[s + window_len] == nonzero_prefix[s])
        .filter(|&s| {
            let lo = s.saturating_sub(guard);
            let hi = s + window_len + guard;
            let idx = onsets.partition_point(|&o| o < lo);
            idx >= onsets.len() || onsets[idx] >= hi
        })
        .collect();

    let mut rng = rng_for(seed, "rest-sampling");
    candidates.shuffle(&mut rng);
    let mut accepted = BTreeSet::new();
    for s in candidates {
        if accepted.len() == count {
            break;
        }
        let prev_clear = accepted.range(..=s).next_back().map_or(true, |&p| p + window_len <= s);
        let next_clear = accepted.range(s..).next().map_or(true, |&q| s + window_len <= q);
        if prev_clear && next_clear {
            accepted.insert(s);
        }
    }
    let shortfall = accepted.len() < count;
    if shortfall {
        warn!(
            "only {} of {count} rest windows available in {}",
            accepted.len(),
            rec.id()
        );
    }
    let epochs = accepted
        .into_iter()
        .map(|s| {
            Epoch::new(
                LABEL_REST,
                EPOCH_CHANNELS,
                window_len,
                window_at(rec, s, window_len),
                (rec.id().to_string(), s),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RestSample { epochs, shortfall })
}

/// Per-sample mean of one channel row across epochs.
pub fn erp_average(epochs: &[Epoch], channel: usize) -> Result<Vec<f64>> {
    let first = epochs.first().ok_or_else(|| Error::EmptyInput("no epochs to average".into()))?;
    let (n_ch, n_t) = first.shape();
    if channel >= n_ch {
        return Err(Error::Index(format!("channel {channel} >= {n_ch}")));
    }
    let mut acc = vec![0.0; n_t];
    for e in epochs {
        if e.shape() != (n_ch, n_t) {
            return Err(Error::Shape("epochs have mismatched shapes".into()));
        }
        for (a, v) in acc.iter_mut().zip(e.channel_row(channel)) {
            *a += v;
        }
    }
    let n = epochs.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recording::RecordingMetadata;
    use rand::{Rng, SeedableRng};

    pub(crate) fn rec19(n: usize, marker: Vec<i32>, f: impl Fn(usize, usize) -> f64) -> Recording {
        let names: Vec<String> = (0..19).map(|c| format!("ch{c}")).collect();
        let mut data = vec![0.0; n * 19];
        for t in 0..n {
            for c in 0..19 {
                data[t * 19 + c] = f(c, t);
            }
        }
        Recording::new(
            RecordingMetadata { id: "t".into(), n_samples: n, sample_rate_hz: 200.0, channel_names: names },
            data,
            marker,
        )
        .unwrap()
    }

    #[test]
    fn hand_traced_transitions() {
        let ev = detect_onsets(&[0, 0, 1, 1, 0, 0, 2, 2, 0], 200.0);
        let got: Vec<(usize, u8)> = ev.iter().map(|e| (e.sample_index, e.code)).collect();
        assert_eq!(got, vec![(2, 1), (6, 2)]);
        assert_eq!(ev[1].time_s, 6.0 / 200.0);
    }

    #[test]
    fn silent_marker_has_no_events() {
        assert!(detect_onsets(&[0; 50], 200.0).is_empty());
    }

    #[test]
    fn run_at_start_and_foreign_codes() {
        let ev = detect_onsets(&[1, 1, 0, 3, 3, 0, 2, 1, 0], 200.0);
        let got: Vec<(usize, u8)> = ev.iter().map(|e| (e.sample_index, e.code)).collect();
        // 2→1 has no silent predecessor, 3 is not an imagery code
        assert_eq!(got, vec![(0, 1), (6, 2)]);
    }

    #[test]
    fn window_spans_one_second() {
        let rec = rec19(2000, vec![0; 2000], |c, t| (c * 10_000 + t) as f64);
        let onset = MarkerEvent { sample_index: 1000, code: 2, time_s: 5.0 };
        let e = extract_epoch(&rec, &onset, 200).unwrap();
        assert_eq!(e.shape(), (19, 200));
        assert_eq!(e.label, 2);
        assert_eq!(e.n_samples as f64 / rec.sample_rate_hz(), 1.0);
        assert_eq!(e.origin, ("t".to_string(), 1000));
    }

    #[test]
    fn constant_recording_gives_constant_window() {
        let rec = rec19(400, vec![0; 400], |_, _| 4.5);
        let e = extract_epoch(&rec, &MarkerEvent { sample_index: 10, code: 1, time_s: 0.05 }, 200).unwrap();
        assert!(e.window.iter().all(|&v| v == 4.5));
    }

    #[test]
    fn closed_form_fill() {
        let rec = rec19(600, vec![0; 600], |c, t| 1000.0 * c as f64 + t as f64);
        let onset = 137;
        let e = extract_epoch(&rec, &MarkerEvent { sample_index: onset, code: 1, time_s: 0.0 }, 200).unwrap();
        for c in 0..19 {
            for k in 0..200 {
                assert_eq!(e.window[c * 200 + k], 1000.0 * c as f64 + (onset + k) as f64);
            }
        }
    }

    #[test]
    fn overrun_is_bounds_error() {
        let rec = rec19(300, vec![0; 300], |_, _| 0.0);
        let r = extract_epoch(&rec, &MarkerEvent { sample_index: 150, code: 1, time_s: 0.0 }, 200);
        assert!(matches!(r, Err(Error::Bounds(_))));
    }

    #[test]
    fn zero_rest_count_is_empty() {
        let rec = rec19(1000, vec![0; 1000], |_, _| 0.0);
        let r = sample_rest_epochs(&rec, &[], 0, 200, 0.0, 1).unwrap();
        assert!(r.epochs.is_empty() && !r.shortfall);
    }

    #[test]
    fn rest_windows_are_silent_and_disjoint() {
        let rec = rec19(3000, vec![0; 3000], |c, t| (c + t) as f64);
        let r = sample_rest_epochs(&rec, &[], 5, 200, 0.0, 9).unwrap();
        assert_eq!(r.epochs.len(), 5);
        let starts: Vec<usize> = r.epochs.iter().map(|e| e.origin.1).collect();
        for w in starts.windows(2) {
            assert!(w[0] + 200 <= w[1]);
        }
        for e in &r.epochs {
            assert_eq!(e.label, 0);
            assert!(rec.marker()[e.origin.1..e.origin.1 + 200].iter().all(|&m| m == 0));
        }
    }

    #[test]
    fn rest_respects_guard_and_reports_shortfall() {
        let mut marker = vec![0; 1200];
        marker[600..620].iter_mut().for_each(|m| *m = 1);
        let rec = rec19(1200, marker.clone(), |_, _| 0.0);
        let events = detect_onsets(&marker, 200.0);
        // guard of 1 s = 200 samples around the onset at 600
        let r = sample_rest_epochs(&rec, &events, 10, 200, 1.0, 3).unwrap();
        assert!(r.shortfall);
        for e in &r.epochs {
            let s = e.origin.1;
            assert!(s + 200 + 200 <= 600 || s >= 600 + 200);
            assert!(marker[s..s + 200].iter().all(|&m| m == 0));
        }
        let again = sample_rest_epochs(&rec, &events, 10, 200, 1.0, 3).unwrap();
        assert_eq!(r.epochs, again.epochs);
    }

    #[test]
    fn erp_of_one_epoch_is_its_row() {
        let w: Vec<f64> = (0..6).map(f64::from).collect();
        let e = Epoch::new(1, 2, 3, w, ("x".into(), 0)).unwrap();
        assert_eq!(erp_average(&[e], 1).unwrap(), vec![3.0, 4.0, 5.0]);
    }

    #[test]
    fn erp_of_opposites_is_zero() {
        let w: Vec<f64> = (0..6).map(|v| v as f64 * 1.7 - 2.0).collect();
        let neg: Vec<f64> = w.iter().map(|v| -v).collect();
        let a = Epoch::new(1, 2, 3, w, ("x".into(), 0)).unwrap();
        let b = Epoch::new(1, 2, 3, neg, ("x".into(), 1)).unwrap();
        assert!(erp_average(&[a, b], 0).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn erp_matches_brute_force_mean() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let epochs: Vec<Epoch> = (0..10)
            .map(|i| {
                let w = (0..19 * 200).map(|_| rng.gen_range(-50.0..50.0)).collect();
                Epoch::new(1, 19, 200, w, ("r".into(), i)).unwrap()
            })
            .collect();
        let got = erp_average(&epochs, 4).unwrap();
        for k in 0..200 {
            let mut s = 0.0;
            for e in &epochs {
                s += e.window[4 * 200 + k];
            }
            assert!((got[k] - s / 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn erp_errors() {
        assert!(matches!(erp_average(&[], 0), Err(Error::EmptyInput(_))));
        let e = Epoch::new(0, 2, 3, vec![0.0; 6], ("x".into(), 0)).unwrap();
        assert!(matches!(erp_average(&[e], 2), Err(Error::Index(_))));
    }
}
