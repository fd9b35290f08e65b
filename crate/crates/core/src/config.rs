//! Run configuration: a JSON document whose every field has a default, plus
//! dotted-path overrides from the command line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::models::{Architecture, ModelSpec};
use crate::numerics::TrainConfig;
use crate::preprocess::{DEFAULT_FILTER_ORDER, DEFAULT_HIGHPASS_HZ, EPOCH_SAMPLES};
use crate::recording::NON_CORTICAL_CHANNELS;
use crate::simulator::SimParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_architecture")]
    pub architecture: Architecture,
    /// Missing keys fall back to the architecture's defaults.
    #[serde(default)]
    pub hyperparameters: Value,
}

fn default_architecture() -> Architecture {
    Architecture::BilstmBigru
}

impl Default for ModelSection {
    fn default() -> Self {
        let spec = ModelSpec::default_for(default_architecture());
        Self { architecture: spec.architecture(), hyperparameters: spec.hyperparameters() }
    }
}

impl ModelSection {
    pub fn spec(&self) -> Result<ModelSpec> {
        let hp = match &self.hyperparameters {
            Value::Null => Value::Object(Default::default()),
            v => v.clone(),
        };
        ModelSpec::from_parts(self.architecture, hp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub batch_size: usize,
    /// `None` picks the architecture's default (250, or 500 for the transformer).
    pub max_epochs: Option<usize>,
    pub patience: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    /// `None` defers to the model (the recurrent hybrid clips at 5.0).
    pub clip_norm: Option<f64>,
    pub target_train_accuracy: Option<f64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            max_epochs: None,
            patience: t.patience,
            learning_rate: t.learning_rate,
            validation_fraction: t.validation_fraction,
            clip_norm: None,
            target_train_accuracy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub exclude_channels: Vec<String>,
    pub filter: bool,
    pub highpass_hz: f64,
    pub filter_order: usize,
    pub window_len: usize,
    /// Rest windows per recording; `None` matches that recording's imagery count.
    pub rest_count: Option<usize>,
    pub rest_guard_s: f64,
    pub test_fraction: f64,
    pub stratify: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            exclude_channels: NON_CORTICAL_CHANNELS.iter().map(|s| s.to_string()).collect(),
            filter: false,
            highpass_hz: DEFAULT_HIGHPASS_HZ,
            filter_order: DEFAULT_FILTER_ORDER,
            window_len: EPOCH_SAMPLES,
            rest_count: None,
            rest_guard_s: 1.0,
            test_fraction: 0.2,
            stratify: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossValConfig {
    pub folds: usize,
    pub threads: usize,
}

impl Default for CrossValConfig {
    fn default() -> Self {
        Self { folds: 10, threads: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub train: TrainSettings,
    pub data: DataConfig,
    pub crossval: CrossValConfig,
    pub simulation: SimParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            model: ModelSection::default(),
            train: TrainSettings::default(),
            data: DataConfig::default(),
            crossval: CrossValConfig::default(),
            simulation: SimParams::default(),
        }
    }
}

/// Sets `path` (dot-separated keys) inside `doc`, creating objects on the way.
/// The value is parsed as JSON when possible, otherwise taken as a string.
pub fn set_path(doc: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override path {path:?}")));
    }
    let mut cur = doc;
    for k in &keys[..keys.len() - 1] {
        if !cur.is_object() {
            return Err(Error::Config(format!("override {path:?} descends into a non-object")));
        }
        cur = cur.as_object_mut().unwrap().entry(k.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    match cur.as_object_mut() {
        Some(obj) => {
            obj.insert(keys[keys.len() - 1].to_string(), value);
            Ok(())
        }
        None => Err(Error::Config(format!("override {path:?} descends into a non-object"))),
    }
}

/// Parses `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.to_string()))
        .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))
}

impl RunConfig {
    /// Reads an optional config file and applies overrides in order, except
    /// that `model.architecture` goes first. Switching architecture drops
    /// hyperparameters the file gave for the old one.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        if !doc.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        // architecture first, so hyperparameter overrides survive a switch
        let (arch, rest): (Vec<_>, Vec<_>) = overrides.iter().partition(|(k, _)| k == "model.architecture");
        for (k, v) in arch.into_iter().chain(rest) {
            if k == "model.architecture" {
                let before = doc.pointer("/model/architecture").cloned().unwrap_or_else(|| serde_json::json!(default_architecture()));
                set_path(&mut doc, k, v)?;
                if doc.pointer("/model/architecture") != Some(&before) {
                    if let Some(m) = doc.get_mut("model").and_then(Value::as_object_mut) {
                        m.remove("hyperparameters");
                    }
                }
            } else {
                set_path(&mut doc, k, v)?;
            }
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        cfg.effective()
    }

    /// Validates every section, reporting all problems at once, and fills
    /// in model defaults and the epoch cap.
    pub fn effective(&self) -> Result<Self> {
        let mut problems = Vec::new();
        let mut out = self.clone();
        match self.model.spec() {
            Ok(spec) => {
                out.model.hyperparameters = spec.hyperparameters();
                if let Err(e) = crate::models::Model::init(&spec, 1, self.data.window_len.max(1), 0) {
                    // channel count is unknown here; only shape-independent checks apply
                    if matches!(e, Error::Config(_) | Error::Parameter(_)) {
                        problems.push(e.to_string());
                    }
                }
            }
            Err(e) => problems.push(e.to_string()),
        }
        out.train.max_epochs = Some(self.train.max_epochs.unwrap_or(self.model.architecture.default_max_epochs()));
        if let Err(e) = out.train_config().validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.simulation.validate() {
            problems.push(e.to_string());
        }
        let d = &self.data;
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            problems.push(format!("data.test_fraction {} not in (0, 1)", d.test_fraction));
        }
        if d.window_len == 0 {
            problems.push("data.window_len must be >= 1".into());
        }
        if !(d.rest_guard_s >= 0.0 && d.rest_guard_s.is_finite()) {
            problems.push(format!("data.rest_guard_s {} must be >= 0", d.rest_guard_s));
        }
        if !(d.highpass_hz > 0.0) || d.filter_order == 0 {
            problems.push("data.highpass_hz must be positive and data.filter_order >= 1".into());
        }
        if self.crossval.folds < 2 {
            problems.push(format!("crossval.folds {} must be >= 2", self.crossval.folds));
        }
        if self.crossval.threads == 0 {
            problems.push("crossval.threads must be >= 1".into());
        }
        if problems.is_empty() {
            Ok(out)
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        self.model.spec()
    }

    /// Training settings with the run seed.
    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            max_epochs: t.max_epochs.unwrap_or(self.model.architecture.default_max_epochs()),
            patience: t.patience,
            learning_rate: t.learning_rate,
            validation_fraction: t.validation_fraction,
            clip_norm: t.clip_norm,
            seed: self.seed,
            target_train_accuracy: t.target_train_accuracy,
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

/// Human-readable listing of every default, shown in `--help`.
pub fn defaults_summary() -> String {
    let mut s = String::from("Defaults (override with --set key=value, e.g. --set model.hyperparameters.lstm_units=64):\n");
    for a in Architecture::ALL {
        let hp = ModelSpec::default_for(a).hyperparameters();
        writeln!(s, "  model {:<13} {hp}", a.name()).unwrap();
    }
    let cfg = RunConfig::default();
    for (name, v) in [
        ("train", serde_json::to_value(&cfg.train)),
        ("data", serde_json::to_value(&cfg.data)),
        ("crossval", serde_json::to_value(&cfg.crossval)),
        ("simulation", serde_json::to_value(&cfg.simulation)),
    ] {
        writeln!(s, "  {name:<19} {}", v.unwrap()).unwrap();
    }
    writeln!(s, "  seed                {}", cfg.seed).unwrap();
    s
}
