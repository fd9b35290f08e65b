//! Classifiers: the BiLSTM-BiGRU hybrid, EEGNet, a transformer encoder,
//! gradient-boosted trees and logistic regression.

pub mod eegnet;
pub mod gbt;
pub mod hybrid;
pub mod io;
pub mod logreg;
pub mod recurrent;
pub mod transformer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::train::{full_batch_losses, train, FitOutcome, Network, TrainConfig};
use crate::preprocess::{FeatureMatrix, N_CLASSES};

pub use eegnet::{EegNet, EegNetConfig};
pub use gbt::{GbtConfig, GbtEnsemble, Tree, TreeNode};
pub use hybrid::{HybridConfig, HybridNet};
pub use io::{load_model, load_model_expecting, save_model, MODEL_MAGIC};
pub use logreg::{argmax, LogReg, LogregConfig};
pub use recurrent::{bigru_forward, bilstm_forward, GruParams, LstmParams};
pub use transformer::{attention, positional_encoding, TransformerConfig, TransformerNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    BilstmBigru,
    Eegnet,
    Transformer,
    Gbt,
    Logreg,
}

impl Architecture {
    pub const ALL: [Architecture; 5] =
        [Self::BilstmBigru, Self::Eegnet, Self::Transformer, Self::Gbt, Self::Logreg];

    pub fn name(self) -> &'static str {
        match self {
            Self::BilstmBigru => "bilstm_bigru",
            Self::Eegnet => "eegnet",
            Self::Transformer => "transformer",
            Self::Gbt => "gbt",
            Self::Logreg => "logreg",
        }
    }

    pub fn is_neural(self) -> bool {
        matches!(self, Self::BilstmBigru | Self::Eegnet | Self::Transformer)
    }

    /// Epoch cap used when the run config leaves it unset.
    pub fn default_max_epochs(self) -> usize {
        match self {
            Self::Transformer => 500,
            _ => 250,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s || a.name().replace('_', "-") == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture {s:?}")))
    }
}

/// An architecture together with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", content = "hyperparameters", rename_all = "snake_case")]
pub enum ModelSpec {
    BilstmBigru(HybridConfig),
    Eegnet(EegNetConfig),
    Transformer(TransformerConfig),
    Gbt(GbtConfig),
    Logreg(LogregConfig),
}

impl ModelSpec {
    pub fn default_for(arch: Architecture) -> Self {
        match arch {
            Architecture::BilstmBigru => Self::BilstmBigru(Default::default()),
            Architecture::Eegnet => Self::Eegnet(Default::default()),
            Architecture::Transformer => Self::Transformer(Default::default()),
            Architecture::Gbt => Self::Gbt(Default::default()),
            Architecture::Logreg => Self::Logreg(Default::default()),
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            Self::BilstmBigru(_) => Architecture::BilstmBigru,
            Self::Eegnet(_) => Architecture::Eegnet,
            Self::Transformer(_) => Architecture::Transformer,
            Self::Gbt(_) => Architecture::Gbt,
            Self::Logreg(_) => Architecture::Logreg,
        }
    }

    pub fn hyperparameters(&self) -> serde_json::Value {
        match self {
            Self::BilstmBigru(c) => serde_json::to_value(c),
            Self::Eegnet(c) => serde_json::to_value(c),
            Self::Transformer(c) => serde_json::to_value(c),
            Self::Gbt(c) => serde_json::to_value(c),
            Self::Logreg(c) => serde_json::to_value(c),
        }
        .expect("hyperparameters serialise")
    }

    pub fn from_parts(arch: Architecture, hyperparameters: serde_json::Value) -> Result<Self> {
        let bad = |e: serde_json::Error| Error::Config(format!("{arch} hyperparameters: {e}"));
        Ok(match arch {
            Architecture::BilstmBigru => Self::BilstmBigru(serde_json::from_value(hyperparameters).map_err(bad)?),
            Architecture::Eegnet => Self::Eegnet(serde_json::from_value(hyperparameters).map_err(bad)?),
            Architecture::Transformer => Self::Transformer(serde_json::from_value(hyperparameters).map_err(bad)?),
            Architecture::Gbt => Self::Gbt(serde_json::from_value(hyperparameters).map_err(bad)?),
            Architecture::Logreg => Self::Logreg(serde_json::from_value(hyperparameters).map_err(bad)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    BilstmBigru(HybridNet),
    Eegnet(EegNet),
    Transformer(TransformerNet),
    Gbt(GbtEnsemble),
    Logreg(LogReg),
}

impl Model {
    /// A freshly initialised model; tree and linear models start empty.
    pub fn init(spec: &ModelSpec, channels: usize, samples: usize, seed: u64) -> Result<Self> {
        Ok(match spec {
            ModelSpec::BilstmBigru(c) => Self::BilstmBigru(HybridNet::new(c.clone(), channels, samples, seed)?),
            ModelSpec::Eegnet(c) => Self::Eegnet(EegNet::new(c.clone(), channels, samples, seed)?),
            ModelSpec::Transformer(c) => Self::Transformer(TransformerNet::new(c.clone(), channels, samples, seed)?),
            ModelSpec::Gbt(c) => {
                c.validate()?;
                Self::Gbt(GbtEnsemble { config: c.clone(), n_features: channels * samples, base_score: 0.0, rounds: vec![] })
            }
            ModelSpec::Logreg(c) => {
                c.validate()?;
                Self::Logreg(LogReg::zeros(channels * samples, c.clone()))
            }
        })
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Self::BilstmBigru(m) => ModelSpec::BilstmBigru(m.config.clone()),
            Self::Eegnet(m) => ModelSpec::Eegnet(m.config.clone()),
            Self::Transformer(m) => ModelSpec::Transformer(m.config.clone()),
            Self::Gbt(m) => ModelSpec::Gbt(m.config.clone()),
            Self::Logreg(m) => ModelSpec::Logreg(m.config.clone()),
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.spec().architecture()
    }

    pub fn network(&self) -> Option<&dyn Network> {
        match self {
            Self::BilstmBigru(m) => Some(m),
            Self::Eegnet(m) => Some(m),
            Self::Transformer(m) => Some(m),
            _ => None,
        }
    }

    /// Number of values in one input row.
    pub fn input_width(&self) -> usize {
        match self {
            Self::Gbt(m) => m.n_features,
            Self::Logreg(m) => m.n_features(),
            _ => {
                let (c, t) = self.network().unwrap().input_shape();
                c * t
            }
        }
    }

    /// Class probabilities for `n` flattened windows.
    pub fn predict_proba(&self, x: &[f64], n: usize) -> Result<Vec<[f64; N_CLASSES]>> {
        match self {
            Self::Gbt(m) => m.predict_proba(x, n),
            Self::Logreg(m) => m.predict_proba(x, n),
            _ => self.network().unwrap().predict_proba(x, n),
        }
    }

    /// Most probable class per row, ties to the lowest index.
    pub fn predict(&self, x: &[f64], n: usize) -> Result<Vec<u8>> {
        Ok(self.predict_proba(x, n)?.iter().map(|p| argmax(p) as u8).collect())
    }
}

/// A model plus the provenance stored alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: Model,
    pub channels: usize,
    pub samples: usize,
    pub seed: u64,
    /// SHA-256 of the effective model and training configuration.
    pub config_hash: String,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    /// Epoch history and stopping point for neural models.
    pub fit: Option<FitOutcome>,
    /// The training configuration actually applied.
    pub train_config: TrainConfig,
}

pub fn config_hash(spec: &ModelSpec, train: &TrainConfig) -> String {
    let canonical = serde_json::json!({ "model": spec, "train": train });
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Fits the model described by `spec` to `data`.
///
/// Neural models clip gradients at their configured norm when the training
/// config leaves clipping unset.
pub fn train_model(spec: &ModelSpec, data: &FeatureMatrix, train_cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut cfg = train_cfg.clone();
    if let ModelSpec::BilstmBigru(h) = spec {
        if cfg.clip_norm.is_none() {
            cfg.clip_norm = h.clip_norm;
        }
    }
    let (channels, samples) = (data.n_channels, data.n_samples);
    let mut model = Model::init(spec, channels, samples, cfg.seed)?;
    let fit = match &mut model {
        Model::BilstmBigru(m) => Some(train(m, data, &cfg)?),
        Model::Eegnet(m) => Some(train(m, data, &cfg)?),
        Model::Transformer(m) => Some(train(m, data, &cfg)?),
        Model::Gbt(m) => {
            *m = GbtEnsemble::fit(data, &m.config, cfg.seed)?;
            None
        }
        Model::Logreg(m) => {
            *m = LogReg::fit(data, &m.config)?;
            None
        }
    };
    let trained = TrainedModel {
        model,
        channels,
        samples,
        seed: cfg.seed,
        config_hash: config_hash(spec, &cfg),
        best_epoch: fit.as_ref().map(|f| f.best_epoch),
    };
    Ok(TrainOutcome { model: trained, fit, train_config: cfg })
}

/// Training loss on `data` over the first `steps` optimisation steps,
/// starting from a fresh model: Adam steps at `learning_rate` for neural
/// models, boosting rounds for trees, gradient-descent iterations for
/// logistic regression. The first entry is the untrained loss.
pub fn smoke_losses(spec: &ModelSpec, data: &FeatureMatrix, learning_rate: f64, steps: usize, seed: u64) -> Result<Vec<f64>> {
    let mut model = Model::init(spec, data.n_channels, data.n_samples, seed)?;
    match &mut model {
        Model::BilstmBigru(m) => full_batch_losses(m, data, learning_rate, steps, seed),
        Model::Eegnet(m) => full_batch_losses(m, data, learning_rate, steps, seed),
        Model::Transformer(m) => full_batch_losses(m, data, learning_rate, steps, seed),
        Model::Gbt(m) => {
            let cfg = GbtConfig { n_estimators: steps, ..m.config.clone() };
            let fitted = GbtEnsemble::fit(data, &cfg, seed)?;
            Ok((0..=steps).map(|r| fitted.staged_loss(data, r)).collect())
        }
        Model::Logreg(m) => (0..=steps)
            .map(|it| {
                let cfg = LogregConfig { iterations: it, ..m.config.clone() };
                let fitted = LogReg::fit(data, &cfg)?;
                Ok(fitted.loss_and_gradient(&data.x, &data.y)?.0)
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn architecture_names_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
            assert_eq!(a.name().replace('_', "-").parse::<Architecture>().unwrap(), a);
            let spec = ModelSpec::default_for(a);
            let back = ModelSpec::from_parts(a, spec.hyperparameters()).unwrap();
            assert_eq!(back, spec);
        }
        assert!(matches!("lstm".parse::<Architecture>(), Err(Error::Config(_))));
    }

    #[test]
    fn spec_json_shape() {
        let v = serde_json::to_value(ModelSpec::default_for(Architecture::Gbt)).unwrap();
        assert_eq!(v["architecture"], "gbt");
        assert_eq!(v["hyperparameters"]["n_estimators"], 300);
    }

    #[test]
    fn config_hash_tracks_changes() {
        let spec = ModelSpec::default_for(Architecture::Logreg);
        let a = config_hash(&spec, &TrainConfig::default());
        let b = config_hash(&spec, &TrainConfig { seed: 7, ..Default::default() });
        assert_eq!(a.len(), 64);
        assert_ne!(a, b);
        assert_eq!(a, config_hash(&spec, &TrainConfig::default()));
    }

    #[test]
    fn five_step_losses_never_increase() {
        let data = crate::synth::separable_epochs(10, 19, 64, 1.0, 1.0, 11);
        for arch in Architecture::ALL {
            let losses = smoke_losses(&ModelSpec::default_for(arch), &data, 1e-4, 5, 3).unwrap();
            assert_eq!(losses.len(), 6);
            for w in losses.windows(2) {
                assert!(w[1] <= w[0], "{arch}: {losses:?}");
            }
        }
    }
}
