//! The MIWMDL1 container: magic, one JSON header line, then every tensor as
//! little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::gbt::Tree;
use crate::models::{Architecture, LogReg, Model, ModelSpec, TrainedModel};
use crate::numerics::params::ParamSet;
use crate::numerics::tensor::Tensor;
use crate::numerics::train::Network;
use crate::preprocess::N_CLASSES;

pub const MODEL_MAGIC: &[u8; 8] = b"MIWMDL1\n";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    architecture: Architecture,
    hyperparameters: serde_json::Value,
    channels: usize,
    samples: usize,
    seed: u64,
    config_hash: String,
    best_epoch: Option<usize>,
    tensors: Vec<TensorEntry>,
}

fn named_tensors(model: &Model) -> Vec<(String, Tensor)> {
    let from_params = |ps: &ParamSet| ps.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
    match model {
        Model::BilstmBigru(m) => from_params(m.params()),
        Model::Eegnet(m) => from_params(m.params()),
        Model::Transformer(m) => from_params(m.params()),
        Model::Gbt(m) => {
            let mut out = vec![("base_score".to_string(), Tensor::scalar(m.base_score))];
            for (r, trees) in m.rounds.iter().enumerate() {
                for (k, t) in trees.iter().enumerate() {
                    out.push((format!("round{r}.class{k}"), t.to_tensor()));
                }
            }
            out
        }
        Model::Logreg(m) => {
            let d = m.n_features();
            vec![
                ("mean".into(), Tensor::new(vec![d], m.mean.clone()).unwrap()),
                ("scale".into(), Tensor::new(vec![d], m.scale.clone()).unwrap()),
                ("weight".into(), Tensor::matrix(d, N_CLASSES, m.weight.clone()).unwrap()),
                ("bias".into(), Tensor::new(vec![N_CLASSES], m.bias.to_vec()).unwrap()),
            ]
        }
    }
}

pub fn model_to_bytes(tm: &TrainedModel) -> Result<Vec<u8>> {
    let spec = tm.model.spec();
    let tensors = named_tensors(&tm.model);
    let header = Header {
        architecture: spec.architecture(),
        hyperparameters: spec.hyperparameters(),
        channels: tm.channels,
        samples: tm.samples,
        seed: tm.seed,
        config_hash: tm.config_hash.clone(),
        best_epoch: tm.best_epoch,
        tensors: tensors.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
    };
    let mut out = MODEL_MAGIC.to_vec();
    out.extend(serde_json::to_vec(&header)?);
    out.push(b'\n');
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
    Ok(out)
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, msg: msg.into() }
}

fn load_params(into: &mut ParamSet, tensors: Vec<(String, Tensor)>) -> Result<()> {
    let mut ps = into.clone();
    if tensors.len() != ps.len() {
        return Err(format_err(0, format!("{} tensors for {} parameters", tensors.len(), ps.len())));
    }
    for (p, (name, t)) in ps.iter_mut().zip(tensors) {
        if p.name != name || p.value.shape() != t.shape() {
            return Err(format_err(0, format!("tensor {name} {:?} does not fit {} {:?}", t.shape(), p.name, p.value.shape())));
        }
        p.value = t;
    }
    *into = ps;
    Ok(())
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    if bytes.len() < MODEL_MAGIC.len() || &bytes[..MODEL_MAGIC.len()] != MODEL_MAGIC {
        return Err(format_err(0, "bad magic, not a MIWMDL1 model file"));
    }
    let start = MODEL_MAGIC.len();
    let end = bytes[start..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|p| start + p)
        .ok_or_else(|| format_err(start, "unterminated header"))?;
    let header: Header =
        serde_json::from_slice(&bytes[start..end]).map_err(|e| format_err(start, format!("header: {e}")))?;
    let mut offset = end + 1;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let need = n * 8;
        if bytes.len() < offset + need {
            return Err(format_err(offset, format!("truncated tensor {}", entry.name)));
        }
        let data = bytes[offset..offset + need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((entry.name.clone(), Tensor::new(entry.shape.clone(), data)?));
        offset += need;
    }
    if offset != bytes.len() {
        return Err(format_err(offset, "trailing bytes after the last tensor"));
    }

    let spec = ModelSpec::from_parts(header.architecture, header.hyperparameters)
        .map_err(|e| format_err(start, e.to_string()))?;
    let mut model = Model::init(&spec, header.channels, header.samples, 0).map_err(|e| format_err(start, e.to_string()))?;
    match &mut model {
        Model::BilstmBigru(m) => load_params(m.params_mut(), tensors)?,
        Model::Eegnet(m) => load_params(m.params_mut(), tensors)?,
        Model::Transformer(m) => load_params(m.params_mut(), tensors)?,
        Model::Gbt(m) => {
            let mut it = tensors.into_iter();
            let base = it.next().filter(|(n, t)| n == "base_score" && t.len() == 1);
            let (_, base) = base.ok_or_else(|| format_err(0, "missing base_score"))?;
            m.base_score = base.data()[0];
            let rest: Vec<_> = it.collect();
            if rest.len() % N_CLASSES != 0 {
                return Err(format_err(0, "tree count is not a multiple of the class count"));
            }
            for (r, chunk) in rest.chunks(N_CLASSES).enumerate() {
                let mut trees = Vec::with_capacity(N_CLASSES);
                for (k, (name, t)) in chunk.iter().enumerate() {
                    if *name != format!("round{r}.class{k}") {
                        return Err(format_err(0, format!("unexpected tensor {name}")));
                    }
                    trees.push(Tree::from_tensor(t, m.n_features)?);
                }
                m.rounds.push(trees);
            }
        }
        Model::Logreg(m) => {
            let d = m.n_features();
            let expect = [("mean", vec![d]), ("scale", vec![d]), ("weight", vec![d, N_CLASSES]), ("bias", vec![N_CLASSES])];
            if tensors.len() != 4 || tensors.iter().zip(&expect).any(|((n, t), (en, es))| n != en || t.shape() != es.as_slice()) {
                return Err(format_err(0, "logistic regression tensors do not match"));
            }
            let mut v = tensors.into_iter().map(|(_, t)| t.into_data());
            *m = LogReg {
                config: m.config.clone(),
                mean: v.next().unwrap(),
                scale: v.next().unwrap(),
                weight: v.next().unwrap(),
                bias: v.next().unwrap().try_into().unwrap(),
            };
        }
    }
    Ok(TrainedModel {
        model,
        channels: header.channels,
        samples: header.samples,
        seed: header.seed,
        config_hash: header.config_hash,
        best_epoch: header.best_epoch,
    })
}

pub fn save_model(tm: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_bytes(tm)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

/// Loads a model and checks its architecture tag.
pub fn load_model_expecting(path: impl AsRef<Path>, arch: Architecture) -> Result<TrainedModel> {
    let tm = load_model(path)?;
    let found = tm.model.architecture();
    if found != arch {
        return Err(format_err(MODEL_MAGIC.len(), format!("architecture tag {found} does not match expected {arch}")));
    }
    Ok(tm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{train_model, EegNetConfig, GbtConfig, HybridConfig, TransformerConfig};
    use crate::numerics::train::TrainConfig;
    use crate::preprocess::FeatureMatrix;

    fn data(c: usize, t: usize, n: usize) -> FeatureMatrix {
        let x = (0..n * c * t).map(|i| ((i * 37 % 101) as f64 - 50.0) / 25.0).collect();
        let y = (0..n).map(|i| (i % 3) as u8).collect();
        FeatureMatrix::new(c, t, x, y).unwrap()
    }

    fn specs() -> Vec<ModelSpec> {
        vec![
            ModelSpec::BilstmBigru(HybridConfig { lstm_units: 3, gru_units: 2, ..Default::default() }),
            ModelSpec::Eegnet(EegNetConfig { kern_length: 4, separable_kernel: 2, pool1: 2, pool2: 2, f1: 2, d: 2, f2: 4, ..Default::default() }),
            ModelSpec::Transformer(TransformerConfig { embed_dim: 4, ff_dim: 6, ..Default::default() }),
            ModelSpec::Gbt(GbtConfig { n_estimators: 4, ..Default::default() }),
            ModelSpec::Logreg(Default::default()),
        ]
    }

    #[test]
    fn every_architecture_round_trips_bit_exactly() {
        let fm = data(2, 8, 30);
        let cfg = TrainConfig { max_epochs: 2, batch_size: 8, ..Default::default() };
        for spec in specs() {
            let tm = train_model(&spec, &fm, &cfg).unwrap().model;
            let bytes = model_to_bytes(&tm).unwrap();
            let back = model_from_bytes(&bytes).unwrap();
            assert_eq!(back, tm, "{:?}", spec.architecture());
            assert_eq!(model_to_bytes(&back).unwrap(), bytes);
            let a = tm.model.predict_proba(&fm.x, fm.n_rows()).unwrap();
            let b = back.model.predict_proba(&fm.x, fm.n_rows()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn corrupted_files_are_format_errors() {
        let fm = data(2, 8, 12);
        let tm = train_model(&specs()[4], &fm, &TrainConfig::default()).unwrap().model;
        let mut bytes = model_to_bytes(&tm).unwrap();
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(model_from_bytes(truncated), Err(Error::Format { .. })));
        bytes[0] = b'X';
        assert!(matches!(model_from_bytes(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn architecture_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.miw");
        let tm = train_model(&specs()[4], &data(2, 8, 12), &TrainConfig::default()).unwrap().model;
        save_model(&tm, &path).unwrap();
        assert!(load_model_expecting(&path, Architecture::Logreg).is_ok());
        assert!(matches!(load_model_expecting(&path, Architecture::Gbt), Err(Error::Format { .. })));
    }
}
