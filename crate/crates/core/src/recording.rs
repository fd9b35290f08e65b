//! The `EEGREC v1` recording container and channel selection.
//!
//! Layout, with no padding between sections:
//!
//! ```text
//! "EEGREC1\n"                                   8 bytes, ASCII magic
//! {"id":..,"n_samples":..,"sample_rate_hz":..,
//!  "channel_names":[..],"marker_present":true}\n JSON header line
//! f64 LE × n_samples × n_channels               row-major EEG samples (µV)
//! i32 LE × n_samples                            marker stream
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RECORDING_MAGIC: &[u8; 8] = b"EEGREC1\n";

/// Channel order of the 22-column source recordings (10–20 placement plus
/// the two ear references and the auxiliary X5 lead).
pub const SOURCE_CHANNELS: [&str; 22] = [
    "Fp1", "Fp2", "F3", "F4", "C3", "C4", "P3", "P4", "O1", "O2", "A1", "A2", "F7", "F8", "T3",
    "T4", "T5", "T6", "Fz", "Cz", "Pz", "X5",
];

/// Non-cortical channels dropped before epoching.
pub const NON_CORTICAL_CHANNELS: [&str; 3] = ["A1", "A2", "X5"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMetadata {
    pub id: String,
    pub n_samples: usize,
    pub sample_rate_hz: f64,
    pub channel_names: Vec<String>,
}

impl RecordingMetadata {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Data("recording has no samples".into()));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::Data(format!("invalid sample rate {}", self.sample_rate_hz)));
        }
        if self.channel_names.is_empty() {
            return Err(Error::Data("recording has no channels".into()));
        }
        let mut seen = HashSet::new();
        for name in &self.channel_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Data(format!("duplicate channel name {name}")));
            }
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|c| c == name)
    }
}

/// Continuous EEG plus the synchronized marker stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    meta: RecordingMetadata,
    /// Row-major, `n_samples × n_channels`.
    data: Vec<f64>,
    marker: Vec<i32>,
}

impl Recording {
    pub fn new(meta: RecordingMetadata, data: Vec<f64>, marker: Vec<i32>) -> Result<Self> {
        meta.validate()?;
        let expected = meta.n_samples * meta.n_channels();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "data holds {} values, metadata implies {} × {} = {}",
                data.len(),
                meta.n_samples,
                meta.n_channels(),
                expected
            )));
        }
        if marker.len() != meta.n_samples {
            return Err(Error::Shape(format!(
                "marker length {} != n_samples {}",
                marker.len(),
                meta.n_samples
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            let n_ch = meta.n_channels();
            return Err(Error::Data(format!(
                "non-finite value at sample {}, channel {}",
                i / n_ch,
                i % n_ch
            )));
        }
        Ok(Self { meta, data, marker })
    }

    pub fn meta(&self) -> &RecordingMetadata {
        &self.meta
    }

    pub fn id(&self) -> &str {
        &self.meta.id
    }

    pub fn n_samples(&self) -> usize {
        self.meta.n_samples
    }

    pub fn n_channels(&self) -> usize {
        self.meta.n_channels()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.meta.sample_rate_hz
    }

    pub fn channel_names(&self) -> &[String] {
        &self.meta.channel_names
    }

    /// Row-major `n_samples × n_channels` samples.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn marker(&self) -> &[i32] {
        &self.marker
    }

    #[inline]
    pub fn sample(&self, t: usize, channel: usize) -> f64 {
        self.data[t * self.n_channels() + channel]
    }

    /// Copies one channel out as a contiguous time series.
    pub fn channel(&self, channel: usize) -> Vec<f64> {
        let n_ch = self.n_channels();
        self.data.iter().skip(channel).step_by(n_ch).copied().collect()
    }

    /// Rebuilds the recording from per-channel series, keeping metadata and marker.
    pub(crate) fn with_channels(&self, channels: &[Vec<f64>]) -> Result<Self> {
        let n = self.n_samples();
        let n_ch = channels.len();
        let mut data = vec![0.0; n * n_ch];
        for (c, series) in channels.iter().enumerate() {
            for (t, &v) in series.iter().enumerate() {
                data[t * n_ch + c] = v;
            }
        }
        Recording::new(self.meta.clone(), data, self.marker.clone())
    }

    /// Size in bytes of this recording once encoded as `EEGREC v1`.
    pub fn encoded_len(&self) -> Result<usize> {
        let header = header_line(&self.meta)?;
        Ok(RECORDING_MAGIC.len()
            + header.len()
            + 8 * self.n_samples() * self.n_channels()
            + 4 * self.n_samples())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = header_line(&self.meta)?;
        let mut out = Vec::with_capacity(self.encoded_len()?);
        out.extend_from_slice(RECORDING_MAGIC);
        out.extend_from_slice(header.as_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for m in &self.marker {
            out.extend_from_slice(&m.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < RECORDING_MAGIC.len() || &bytes[..RECORDING_MAGIC.len()] != RECORDING_MAGIC
        {
            return Err(Error::Format { offset: 0, msg: "missing EEGREC1 magic".into() });
        }
        let start = RECORDING_MAGIC.len();
        let newline = bytes[start..].iter().position(|&b| b == b'\n').ok_or(Error::Format {
            offset: start as u64,
            msg: "unterminated JSON header".into(),
        })?;
        let header: ContainerHeader =
            serde_json::from_slice(&bytes[start..start + newline]).map_err(|e| Error::Format {
                offset: start as u64,
                msg: format!("garbled header: {e}"),
            })?;
        if !header.marker_present {
            return Err(Error::Format {
                offset: start as u64,
                msg: "marker_present must be true".into(),
            });
        }
        let meta = RecordingMetadata {
            id: header.id,
            n_samples: header.n_samples,
            sample_rate_hz: header.sample_rate_hz,
            channel_names: header.channel_names,
        };
        meta.validate()?;

        let payload_start = start + newline + 1;
        let n = meta.n_samples;
        let n_values = n
            .checked_mul(meta.n_channels())
            .ok_or_else(|| Error::Shape("declared shape overflows".into()))?;
        let expected = n_values
            .checked_mul(8)
            .and_then(|d| d.checked_add(4 * n))
            .ok_or_else(|| Error::Shape("declared shape overflows".into()))?;
        let payload = &bytes[payload_start..];
        if payload.len() != expected {
            return Err(Error::Shape(format!(
                "header declares {} samples × {} channels ({} payload bytes) but {} bytes follow at offset {}",
                n,
                meta.n_channels(),
                expected,
                payload.len(),
                payload_start
            )));
        }
        let (samples, markers) = payload.split_at(8 * n_values);
        let data: Vec<f64> = samples
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let marker: Vec<i32> = markers
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Recording::new(meta, data, marker)
    }
}

#[derive(Serialize, Deserialize)]
struct ContainerHeader {
    id: String,
    n_samples: usize,
    sample_rate_hz: f64,
    channel_names: Vec<String>,
    marker_present: bool,
}

fn header_line(meta: &RecordingMetadata) -> Result<String> {
    let header = ContainerHeader {
        id: meta.id.clone(),
        n_samples: meta.n_samples,
        sample_rate_hz: meta.sample_rate_hz,
        channel_names: meta.channel_names.clone(),
        marker_present: true,
    };
    let mut line = serde_json::to_string(&header)?;
    line.push('\n');
    Ok(line)
}

pub fn load_recording(path: impl AsRef<Path>) -> Result<Recording> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Recording::from_bytes(&bytes)
}

pub fn save_recording(rec: &Recording, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, rec.to_bytes()?).map_err(|e| Error::io(path, e))
}

/// Drops the named channels, keeping the remaining columns in their original order.
pub fn select_cortical_channels(rec: &Recording, exclude: &[&str]) -> Result<Recording> {
    for name in exclude {
        if rec.meta.channel_index(name).is_none() {
            return Err(Error::Name((*name).to_string()));
        }
    }
    let keep: Vec<usize> = (0..rec.n_channels())
        .filter(|&c| !exclude.contains(&rec.meta.channel_names[c].as_str()))
        .collect();
    let n_keep = keep.len();
    if n_keep == 0 {
        return Err(Error::Data("channel selection removed every channel".into()));
    }
    let mut data = Vec::with_capacity(rec.n_samples() * n_keep);
    for row in rec.data.chunks_exact(rec.n_channels()) {
        data.extend(keep.iter().map(|&c| row[c]));
    }
    let meta = RecordingMetadata {
        channel_names: keep.iter().map(|&c| rec.meta.channel_names[c].clone()).collect(),
        ..rec.meta.clone()
    };
    Recording::new(meta, data, rec.marker.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(n_samples: usize, names: &[&str]) -> RecordingMetadata {
        RecordingMetadata {
            id: "synthetic".into(),
            n_samples,
            sample_rate_hz: 200.0,
            channel_names: names.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn hand_assembled_container_decodes() {
        // Bytes composed directly from the layout description, not via to_bytes.
        let names = ["a", "b", "c"];
        let header = r#"{"id":"hand","n_samples":10,"sample_rate_hz":200.0,"channel_names":["a","b","c"],"marker_present":true}"#;
        let mut bytes = b"EEGREC1\n".to_vec();
        bytes.extend_from_slice(header.as_bytes());
        bytes.push(b'\n');
        for t in 0..10 {
            for c in 0..3 {
                let v = (t as f64) * 0.5 - (c as f64) * 3.25;
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        for t in 0..10i32 {
            bytes.extend_from_slice(&(t % 3).to_le_bytes());
        }
        let rec = Recording::from_bytes(&bytes).unwrap();
        assert_eq!(rec.n_samples(), 10);
        assert_eq!(rec.channel_names(), names.map(String::from));
        for t in 0..10 {
            for c in 0..3 {
                assert_eq!(rec.sample(t, c), (t as f64) * 0.5 - (c as f64) * 3.25);
            }
        }
        assert_eq!(rec.marker(), &[0, 1, 2, 0, 1, 2, 0, 1, 2, 0]);
    }

    #[test]
    fn missing_magic_is_format_error() {
        let err = Recording::from_bytes(b"EEGREC2\n{}\n").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
    }

    #[test]
    fn garbled_header_is_format_error() {
        let err = Recording::from_bytes(b"EEGREC1\n{not json\n").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 8, .. }));
    }

    #[test]
    fn truncated_payload_is_shape_error() {
        let rec = Recording::new(meta(4, &["a", "b"]), vec![1.0; 8], vec![0; 4]).unwrap();
        let mut bytes = rec.to_bytes().unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(Recording::from_bytes(&bytes), Err(Error::Shape(_))));
    }

    #[test]
    fn non_finite_payload_is_data_error() {
        let rec = Recording::new(meta(2, &["a"]), vec![1.0, 2.0], vec![0; 2]).unwrap();
        let mut bytes = rec.to_bytes().unwrap();
        let header_end = bytes.iter().skip(8).position(|&b| b == b'\n').unwrap() + 9;
        bytes[header_end..header_end + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(Recording::from_bytes(&bytes), Err(Error::Data(_))));
    }

    #[test]
    fn unknown_marker_codes_are_preserved() {
        let rec = Recording::new(meta(3, &["a"]), vec![0.0; 3], vec![7, -1, 2]).unwrap();
        let back = Recording::from_bytes(&rec.to_bytes().unwrap()).unwrap();
        assert_eq!(back.marker(), &[7, -1, 2]);
    }

    #[test]
    fn all_zero_marker_round_trips() {
        let rec = Recording::new(meta(5, &["a", "b"]), (0..10).map(f64::from).collect(), vec![0; 5])
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.eegrec");
        save_recording(&rec, &path).unwrap();
        assert_eq!(load_recording(&path).unwrap(), rec);
    }

    #[test]
    fn file_size_follows_layout_arithmetic() {
        let names: Vec<&str> = SOURCE_CHANNELS
            .iter()
            .copied()
            .filter(|c| !NON_CORTICAL_CHANNELS.contains(c))
            .collect();
        let n = 664_400;
        let rec = Recording::new(meta(n, &names), vec![0.25; n * 19], vec![0; n]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.eegrec");
        save_recording(&rec, &path).unwrap();
        let header_len = serde_json::to_string(&ContainerHeader {
            id: "synthetic".into(),
            n_samples: n,
            sample_rate_hz: 200.0,
            channel_names: names.iter().map(|s| s.to_string()).collect(),
            marker_present: true,
        })
        .unwrap()
        .len()
            + 1;
        let expected = 8 + header_len + 8 * n * 19 + 4 * n;
        assert_eq!(fs::metadata(&path).unwrap().len() as usize, expected);
        assert_eq!(rec.encoded_len().unwrap(), expected);
    }

    #[test]
    fn excluding_non_cortical_leaves_nineteen() {
        let n = 4;
        let data: Vec<f64> = (0..n * 22).map(|v| v as f64).collect();
        let rec = Recording::new(meta(n, &SOURCE_CHANNELS), data, vec![0, 1, 0, 2]).unwrap();
        let out = select_cortical_channels(&rec, &NON_CORTICAL_CHANNELS).unwrap();
        assert_eq!(out.n_channels(), 19);
        assert!(out.channel_names().iter().all(|c| c != "A1" && c != "A2" && c != "X5"));
        assert_eq!(out.marker(), rec.marker());
    }

    #[test]
    fn empty_exclusion_is_identity() {
        let rec = Recording::new(meta(2, &["a", "b"]), vec![1.0, 2.0, 3.0, 4.0], vec![0, 1]).unwrap();
        assert_eq!(select_cortical_channels(&rec, &[]).unwrap(), rec);
    }

    #[test]
    fn selection_matches_manual_submatrix() {
        let names = ["a", "b", "c", "d", "e"];
        let n = 6;
        let data: Vec<f64> = (0..n * 5).map(|v| (v as f64).sin()).collect();
        let rec = Recording::new(meta(n, &names), data.clone(), vec![0; n]).unwrap();
        let out = select_cortical_channels(&rec, &["b", "d"]).unwrap();
        let mut manual = Vec::new();
        for t in 0..n {
            for c in [0usize, 2, 4] {
                manual.push(data[t * 5 + c]);
            }
        }
        assert_eq!(out.data(), manual.as_slice());
        assert_eq!(out.channel_names(), ["a", "c", "e"].map(String::from));
    }

    #[test]
    fn unknown_channel_is_name_error() {
        let rec = Recording::new(meta(1, &["a"]), vec![0.0], vec![0]).unwrap();
        assert!(matches!(select_cortical_channels(&rec, &["zz"]), Err(Error::Name(_))));
    }
}
