//! Recording-to-dataset assembly shared by the command line and examples.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::config::DataConfig;
use crate::error::{Error, Result};
use crate::preprocess::{
    detect_onsets, erp_average, extract_epochs, flatten, highpass_filter, read_epoch_cache, read_feature_csv,
    sample_rest_epochs, unflatten, EpochedDataset, FeatureMatrix, EPOCH_CACHE_MAGIC, N_CLASSES,
};
use crate::recording::{select_cortical_channels, Recording, SOURCE_CHANNELS};

/// Per-recording counts reported in the segment manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceSummary {
    pub id: String,
    pub events: usize,
    pub imagery_epochs: usize,
    pub skipped_events: usize,
    pub rest_epochs: usize,
    pub rest_requested: usize,
    pub rest_shortfall: bool,
    pub class_counts: [usize; N_CLASSES],
}

/// Channel selection, optional high-pass, onset detection, imagery windows
/// and rest sampling for one recording. `seed` drives the rest draw.
pub fn segment_recording(rec: &Recording, cfg: &DataConfig, seed: u64) -> Result<(Vec<crate::preprocess::Epoch>, SourceSummary)> {
    let exclude: Vec<&str> = cfg.exclude_channels.iter().map(String::as_str).collect();
    let mut rec = select_cortical_channels(rec, &exclude).map_err(|e| e.at_stage("channel selection"))?;
    if cfg.filter {
        rec = highpass_filter(&rec, cfg.highpass_hz, cfg.filter_order).map_err(|e| e.at_stage("filter"))?;
    }
    let events = detect_onsets(rec.marker(), rec.sample_rate_hz());
    let mut epochs = extract_epochs(&rec, &events, cfg.window_len).map_err(|e| e.at_stage("epoching"))?;
    let imagery = epochs.len();
    let requested = cfg.rest_count.unwrap_or(imagery);
    let rest = sample_rest_epochs(&rec, &events, requested, cfg.window_len, cfg.rest_guard_s, seed)
        .map_err(|e| e.at_stage("rest sampling"))?;
    let summary_rest = rest.epochs.len();
    epochs.extend(rest.epochs);
    let mut class_counts = [0; N_CLASSES];
    for e in &epochs {
        class_counts[e.label as usize] += 1;
    }
    let summary = SourceSummary {
        id: rec.id().to_string(),
        events: events.len(),
        imagery_epochs: imagery,
        skipped_events: events.len() - imagery,
        rest_epochs: summary_rest,
        rest_requested: requested,
        rest_shortfall: rest.shortfall,
        class_counts,
    };
    Ok((epochs, summary))
}

/// Segments every recording in order; recording `i` samples rest windows
/// with seed `seed + i`.
pub fn segment(recs: &[Recording], cfg: &DataConfig, seed: u64) -> Result<(EpochedDataset, Vec<SourceSummary>)> {
    let mut all = Vec::new();
    let mut summaries = Vec::with_capacity(recs.len());
    for (i, rec) in recs.iter().enumerate() {
        let (epochs, s) = segment_recording(rec, cfg, seed.wrapping_add(i as u64))?;
        all.extend(epochs);
        summaries.push(s);
    }
    if all.is_empty() {
        return Err(Error::EmptyInput("no epochs could be cut from the recordings".into()).at_stage("epoching"));
    }
    let ds = EpochedDataset::new(all);
    flatten(&ds).map_err(|e| e.at_stage("flatten"))?;
    Ok((ds, summaries))
}

fn is_epoch_cache(path: &Path) -> Result<bool> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(bytes.starts_with(EPOCH_CACHE_MAGIC))
}

/// Reads an `EEGEPO1` cache or a feature CSV, chosen by content.
pub fn load_epochs(path: impl AsRef<Path>) -> Result<EpochedDataset> {
    let path = path.as_ref();
    if is_epoch_cache(path)? {
        read_epoch_cache(path)
    } else {
        unflatten(&read_feature_csv(path)?)
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    if is_epoch_cache(path)? {
        flatten(&read_epoch_cache(path)?)
    } else {
        read_feature_csv(path)
    }
}

/// Source channel names left after dropping `exclude`, in recording order.
pub fn retained_channels(exclude: &[String]) -> Vec<&'static str> {
    SOURCE_CHANNELS.iter().copied().filter(|c| !exclude.iter().any(|e| e == c)).collect()
}

/// Resolves a channel given as a name (against `names`) or a numeric index.
pub fn resolve_channel(spec: &str, names: &[&str], n_channels: usize) -> Result<usize> {
    let idx = match spec.parse::<usize>() {
        Ok(i) => i,
        Err(_) if names.len() == n_channels => names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(spec))
            .ok_or_else(|| Error::Index(format!("unknown channel {spec:?}")))?,
        Err(_) => {
            return Err(Error::Index(format!(
                "channel {spec:?} cannot be named: dataset has {n_channels} channels, {} known names",
                names.len()
            )))
        }
    };
    if idx >= n_channels {
        return Err(Error::Index(format!("channel {idx} >= {n_channels}")));
    }
    Ok(idx)
}

/// Per-class average of one channel; classes without epochs are `None`.
pub fn class_erps(ds: &EpochedDataset, channel: usize) -> Result<Vec<Option<Vec<f64>>>> {
    if ds.is_empty() {
        return Err(Error::EmptyInput("no epochs to average".into()));
    }
    (0..N_CLASSES as u8)
        .map(|c| {
            let of = ds.of_class(c);
            if of.is_empty() {
                Ok(None)
            } else {
                erp_average(&of, channel).map(Some)
            }
        })
        .collect()
}

/// `time_s` then one column per class present.
pub fn erp_csv(erps: &[Option<Vec<f64>>], sample_rate_hz: f64) -> String {
    use std::fmt::Write as _;
    let present: Vec<(usize, &Vec<f64>)> = erps.iter().enumerate().filter_map(|(c, e)| e.as_ref().map(|v| (c, v))).collect();
    let mut s = String::from("time_s");
    for (c, _) in &present {
        write!(s, ",class_{c}").unwrap();
    }
    s.push('\n');
    let len = present.first().map_or(0, |(_, v)| v.len());
    for t in 0..len {
        write!(s, "{}", t as f64 / sample_rate_hz).unwrap();
        for (_, v) in &present {
            write!(s, ",{}", v[t]).unwrap();
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::planted_recording;

    #[test]
    fn planted_recording_segments_to_forty_rows() {
        let p = planted_recording("s", 10, 20.0, 1).unwrap();
        let cfg = DataConfig { rest_count: Some(20), ..Default::default() };
        let (ds, summaries) = segment(&[p.recording.clone()], &cfg, 3).unwrap();
        assert_eq!(ds.len(), 40);
        assert_eq!(ds.class_counts(), [20, 10, 10]);
        assert_eq!(flatten(&ds).unwrap().n_cols(), 3800);
        assert!(!summaries[0].rest_shortfall);

        let none = DataConfig { rest_count: Some(0), ..Default::default() };
        assert_eq!(segment(&[p.recording], &none, 3).unwrap().0.len(), 20);
    }

    #[test]
    fn stage_is_named_on_failure() {
        let p = planted_recording("s", 1, 20.0, 1).unwrap();
        let cfg = DataConfig { exclude_channels: vec!["Q9".into()], ..Default::default() };
        let err = segment(&[p.recording], &cfg, 0).unwrap_err();
        assert!(err.to_string().starts_with("channel selection"), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn channel_resolution() {
        let names = retained_channels(&DataConfig::default().exclude_channels);
        assert_eq!(names.len(), 19);
        assert_eq!(resolve_channel("C3", &names, 19).unwrap(), 4);
        assert_eq!(resolve_channel("7", &names, 19).unwrap(), 7);
        assert!(matches!(resolve_channel("A1", &names, 19), Err(Error::Index(_))));
        assert!(matches!(resolve_channel("19", &names, 19), Err(Error::Index(_))));
    }

    #[test]
    fn erp_csv_layout() {
        let csv = erp_csv(&[Some(vec![1.0, 2.0]), None, Some(vec![3.0, 4.0])], 200.0);
        assert_eq!(csv, "time_s,class_0,class_2\n0,1,3\n0.005,2,4\n");
    }
}
