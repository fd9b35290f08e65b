//! Epoched datasets, the flattened feature matrix, train/test splitting and
//! the on-disk exports (feature CSV and the `EEGEPO1` epoch cache).

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::epoch::Epoch;
use crate::seed::rng_for;

pub const N_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochedDataset {
    epochs: Vec<Epoch>,
    class_counts: [usize; N_CLASSES],
}

impl EpochedDataset {
    pub fn new(epochs: Vec<Epoch>) -> Self {
        let mut class_counts = [0; N_CLASSES];
        for e in &epochs {
            class_counts[e.label as usize] += 1;
        }
        Self { epochs, class_counts }
    }

    pub fn epochs(&self) -> &[Epoch] {
        &self.epochs
    }

    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        self.class_counts
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn of_class(&self, label: u8) -> Vec<Epoch> {
        self.epochs.iter().filter(|e| e.label == label).cloned().collect()
    }
}

/// Row-major `n × (channels · samples)` features plus labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub n_channels: usize,
    pub n_samples: usize,
    pub x: Vec<f64>,
    pub y: Vec<u8>,
}

impl FeatureMatrix {
    pub fn new(n_channels: usize, n_samples: usize, x: Vec<f64>, y: Vec<u8>) -> Result<Self> {
        let cols = n_channels * n_samples;
        if cols == 0 || x.len() != y.len() * cols {
            return Err(Error::Shape(format!(
                "{} values do not form {} rows of {cols} features",
                x.len(),
                y.len()
            )));
        }
        if let Some(l) = y.iter().find(|&&l| l as usize >= N_CLASSES) {
            return Err(Error::Label(format!("label {l} not in {{0,1,2}}")));
        }
        Ok(Self { n_channels, n_samples, x, y })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_channels * self.n_samples
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.n_cols();
        &self.x[i * c..(i + 1) * c]
    }

    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        let mut counts = [0; N_CLASSES];
        for &l in &self.y {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        let mut x = Vec::with_capacity(indices.len() * self.n_cols());
        for &i in indices {
            x.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            n_channels: self.n_channels,
            n_samples: self.n_samples,
            x,
            y: indices.iter().map(|&i| self.y[i]).collect(),
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_cols() + 1);
        for c in 0..self.n_channels {
            for t in 0..self.n_samples {
                names.push(format!("c{c}_t{t}"));
            }
        }
        names
    }
}

/// Channel-major, then time, flattening of every window.
pub fn flatten(ds: &EpochedDataset) -> Result<FeatureMatrix> {
    let first = ds
        .epochs()
        .first()
        .ok_or_else(|| Error::EmptyInput("dataset has no epochs".into()))?;
    let (n_ch, n_t) = first.shape();
    let mut x = Vec::with_capacity(ds.len() * n_ch * n_t);
    let mut y = Vec::with_capacity(ds.len());
    for (i, e) in ds.epochs().iter().enumerate() {
        if e.shape() != (n_ch, n_t) {
            return Err(Error::Shape(format!(
                "epoch {i} is {:?}, expected ({n_ch}, {n_t})",
                e.shape()
            )));
        }
        x.extend_from_slice(&e.window);
        y.push(e.label);
    }
    FeatureMatrix::new(n_ch, n_t, x, y)
}

/// Inverse of [`flatten`]; origins are not carried by the matrix and come back as `("", row)`.
pub fn unflatten(fm: &FeatureMatrix) -> Result<EpochedDataset> {
    let epochs = (0..fm.n_rows())
        .map(|i| Epoch::new(fm.y[i], fm.n_channels, fm.n_samples, fm.row(i).to_vec(), (String::new(), i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EpochedDataset::new(epochs))
}

/// Row indices of a seeded, optionally stratified, train/test partition.
///
/// The test side receives `floor(n · fraction)` rows. When stratified, each
/// class contributes `floor(n_c · fraction)` and the remaining test slots go to
/// the classes with the largest fractional remainders (lowest label first on
/// ties). Both index lists come back sorted.
pub fn split_indices(
    labels: &[u8],
    test_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Parameter(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let n = labels.len();
    let n_test = (n as f64 * test_fraction).floor() as usize;
    let mut rng = rng_for(seed, "train-test-split");
    let mut test = Vec::with_capacity(n_test);

    if stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); N_CLASSES];
        for (i, &l) in labels.iter().enumerate() {
            by_class[l as usize].push(i);
        }
        let mut quota: Vec<usize> = by_class
            .iter()
            .map(|rows| (rows.len() as f64 * test_fraction).floor() as usize)
            .collect();
        let mut spare = n_test - quota.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..N_CLASSES).collect();
        let remainder =
            |c: usize| by_class[c].len() as f64 * test_fraction - quota[c] as f64;
        let rem: Vec<f64> = (0..N_CLASSES).map(remainder).collect();
        order.sort_by(|&a, &b| rem[b].partial_cmp(&rem[a]).unwrap().then(a.cmp(&b)));
        for c in order {
            if spare == 0 {
                break;
            }
            if quota[c] < by_class[c].len() {
                quota[c] += 1;
                spare -= 1;
            }
        }
        for (c, rows) in by_class.iter_mut().enumerate() {
            rows.shuffle(&mut rng);
            test.extend_from_slice(&rows[..quota[c]]);
        }
    } else {
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut rng);
        test.extend_from_slice(&rows[..n_test]);
    }

    test.sort_unstable();
    let mut in_test = vec![false; n];
    for &i in &test {
        in_test[i] = true;
    }
    let train = (0..n).filter(|&i| !in_test[i]).collect();
    Ok((train, test))
}

pub fn split_train_test(
    fm: &FeatureMatrix,
    test_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let (train, test) = split_indices(&fm.y, test_fraction, seed, stratified)?;
    Ok((fm.select(&train), fm.select(&test)))
}

/// Writes the feature CSV: `c<ch>_t<sample>` columns then `label`.
pub fn write_feature_csv(fm: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = fm.column_names();
    header.push("label".into());
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    let mut line = String::new();
    for i in 0..fm.n_rows() {
        line.clear();
        for v in fm.row(i) {
            line.push_str(&v.to_string());
            line.push(',');
        }
        line.push_str(&fm.y[i].to_string());
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_feature_csv(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or(Error::Format { offset: 0, msg: "empty feature CSV".into() })?
        .map_err(|e| Error::io(path, e))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.last() != Some(&"label") {
        return Err(Error::Format { offset: 0, msg: "last CSV column must be `label`".into() });
    }
    let (mut n_ch, mut n_t) = (0, 0);
    for name in &cols[..cols.len() - 1] {
        let (c, t) = name
            .strip_prefix('c')
            .and_then(|s| s.split_once("_t"))
            .and_then(|(c, t)| Some((c.parse::<usize>().ok()?, t.parse::<usize>().ok()?)))
            .ok_or_else(|| Error::Format { offset: 0, msg: format!("bad column name {name}") })?;
        n_ch = n_ch.max(c + 1);
        n_t = n_t.max(t + 1);
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (row, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Shape(format!("CSV row {row} has {} fields", fields.len())));
        }
        for f in &fields[..fields.len() - 1] {
            x.push(f.parse::<f64>().map_err(|_| Error::Data(format!("row {row}: bad value {f}")))?);
        }
        y.push(
            fields[fields.len() - 1]
                .parse::<u8>()
                .map_err(|_| Error::Label(format!("row {row}: bad label")))?,
        );
    }
    FeatureMatrix::new(n_ch, n_t, x, y)
}

pub const EPOCH_CACHE_MAGIC: &[u8; 8] = b"EEGEPO1\n";

#[derive(Serialize, Deserialize)]
struct EpochCacheHeader {
    n_epochs: usize,
    n_channels: usize,
    n_samples: usize,
    class_counts: [usize; N_CLASSES],
    origins: Vec<(String, usize)>,
}

/// `EEGEPO1`: magic, JSON header line, then per epoch an i32 LE label followed
/// by the channel-major window as f64 LE.
pub fn write_epoch_cache(ds: &EpochedDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (n_ch, n_t) = ds.epochs().first().map_or((0, 0), |e| e.shape());
    let header = EpochCacheHeader {
        n_epochs: ds.len(),
        n_channels: n_ch,
        n_samples: n_t,
        class_counts: ds.class_counts(),
        origins: ds.epochs().iter().map(|e| e.origin.clone()).collect(),
    };
    let mut out = EPOCH_CACHE_MAGIC.to_vec();
    out.extend_from_slice(serde_json::to_string(&header)?.as_bytes());
    out.push(b'\n');
    for e in ds.epochs() {
        if e.shape() != (n_ch, n_t) {
            return Err(Error::Shape("epochs have mismatched shapes".into()));
        }
        out.extend_from_slice(&i32::from(e.label).to_le_bytes());
        for v in &e.window {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_epoch_cache(path: impl AsRef<Path>) -> Result<EpochedDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..8] != EPOCH_CACHE_MAGIC {
        return Err(Error::Format { offset: 0, msg: "missing EEGEPO1 magic".into() });
    }
    let nl = bytes[8..]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(Error::Format { offset: 8, msg: "unterminated header".into() })?;
    let header: EpochCacheHeader = serde_json::from_slice(&bytes[8..8 + nl])
        .map_err(|e| Error::Format { offset: 8, msg: format!("garbled header: {e}") })?;
    let per = 4 + 8 * header.n_channels * header.n_samples;
    let payload = &bytes[9 + nl..];
    if payload.len() != per * header.n_epochs || header.origins.len() != header.n_epochs {
        return Err(Error::Shape(format!(
            "cache declares {} epochs but payload holds {} bytes",
            header.n_epochs,
            payload.len()
        )));
    }
    let epochs = payload
        .chunks_exact(per.max(1))
        .take(header.n_epochs)
        .zip(header.origins)
        .map(|(chunk, origin)| {
            let label = i32::from_le_bytes(chunk[..4].try_into().unwrap());
            let label = u8::try_from(label).map_err(|_| Error::Label(format!("label {label}")))?;
            let window = chunk[4..]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Epoch::new(label, header.n_channels, header.n_samples, window, origin)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EpochedDataset::new(epochs))
}
