//! The `mibci` command line. Every command writes into a run directory
//! holding its outputs, the effective `config.json` and a `manifest.json`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{defaults_summary, parse_override, RunConfig};
use crate::error::{Error, Result};
use crate::evaluation::{confusion, cross_validate, metrics, ClassificationReport};
use crate::models::{load_model, save_model, train_model, TrainedModel};
use crate::pipeline::{class_erps, erp_csv, load_epochs, load_features, resolve_channel, retained_channels, segment};
use crate::preprocess::{detect_onsets, flatten, split_indices, write_epoch_cache, write_feature_csv, FeatureMatrix};
use crate::recording::load_recording;
use crate::simulator::{decode_stream, run_simulation, LogSink, PinMap, Pose};

#[derive(Debug, Parser)]
#[command(name = "mibci", version, about = "Motor-imagery EEG classification and wheelchair simulation")]
#[command(after_help = defaults_summary())]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run config; unspecified fields keep their defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config value by dotted path, e.g. train.patience=5.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for every random draw (default 42).
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory for all outputs [default: runs/<command>].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Subset {
    Test,
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print recording metadata and the number of imagery onsets.
    Inspect {
        #[arg(required = true)]
        recordings: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Cut labeled windows from recordings into a feature CSV and epoch cache.
    Segment {
        #[arg(required = true)]
        recordings: Vec<PathBuf>,
        /// Rest windows per recording [default: match its imagery count].
        #[arg(long)]
        rest_count: Option<usize>,
        /// Apply the 0.53 Hz zero-phase high-pass before cutting.
        #[arg(long)]
        filter: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Per-class average waveform of one channel.
    Erp {
        dataset: PathBuf,
        /// Channel name (e.g. C3) or index.
        #[arg(long, default_value = "C3")]
        channel: String,
        #[arg(long, default_value_t = 200.0)]
        sample_rate_hz: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Train on the training split and report on the held-out split.
    Train {
        dataset: PathBuf,
        /// bilstm-bigru, eegnet, transformer, gbt or logreg.
        #[arg(long)]
        model: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a saved model on a dataset.
    Evaluate {
        model_file: PathBuf,
        dataset: PathBuf,
        /// `test` recomputes the held-out split from the config seed and fraction.
        #[arg(long, value_enum, default_value = "test")]
        subset: Subset,
        #[command(flatten)]
        common: Common,
    },
    /// k-fold cross-validation with a fresh model per fold.
    Crossval {
        dataset: PathBuf,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
        /// Plain shuffled folds instead of class-stratified ones.
        #[arg(long)]
        no_stratify: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Replay predictions as wheelchair motion.
    Simulate {
        dataset: PathBuf,
        /// Saved model whose predictions drive the chair.
        #[arg(long, value_name = "FILE", required_unless_present = "labels_as_predictions")]
        model_file: Option<PathBuf>,
        /// Drive the chair from the dataset labels instead of a model.
        #[arg(long, conflicts_with = "model_file")]
        labels_as_predictions: bool,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Inspect { .. } => "inspect",
            Command::Segment { .. } => "segment",
            Command::Erp { .. } => "erp",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Crossval { .. } => "crossval",
            Command::Simulate { .. } => "simulate",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Inspect { common, .. }
            | Command::Segment { common, .. }
            | Command::Erp { common, .. }
            | Command::Train { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Crossval { common, .. }
            | Command::Simulate { common, .. } => common,
        }
    }

    /// Shortcut flags expressed as config overrides, applied after `--set`.
    /// `--model` still lands before any `--set model.hyperparameters.*`.
    fn shortcuts(&self) -> Result<Vec<(String, String)>> {
        let mut o = Vec::new();
        let mut push = |k: &str, v: String| o.push((k.to_string(), v));
        match self {
            Command::Segment { rest_count, filter, .. } => {
                if let Some(n) = rest_count {
                    push("data.rest_count", n.to_string());
                }
                if *filter {
                    push("data.filter", "true".into());
                }
            }
            Command::Train { model, .. } | Command::Crossval { model, .. } if model.is_some() => {
                let arch: crate::models::Architecture = model.as_deref().unwrap().parse()?;
                push("model.architecture", json!(arch.name()).to_string());
            }
            _ => {}
        }
        if let Command::Crossval { folds, threads, no_stratify, .. } = self {
            if let Some(k) = folds {
                o.push(("crossval.folds".into(), k.to_string()));
            }
            if let Some(t) = threads {
                o.push(("crossval.threads".into(), t.to_string()));
            }
            if *no_stratify {
                o.push(("data.stratify".into(), "false".into()));
            }
        }
        Ok(o)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Output directory plus the bookkeeping that ends up in `manifest.json`.
struct RunDir {
    dir: PathBuf,
    inputs: Vec<Value>,
    outputs: Vec<Value>,
}

impl RunDir {
    fn create(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir, inputs: vec![], outputs: vec![] })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(json!({ "path": path.display().to_string(), "bytes": bytes.len(), "sha256": sha256_hex(&bytes) }));
        Ok(())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Records a file already written under the run directory.
    fn record(&mut self, name: &str) -> Result<()> {
        let p = self.path(name);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        self.outputs.push(json!({ "file": name, "bytes": bytes.len(), "sha256": sha256_hex(&bytes) }));
        Ok(())
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        self.record(name)
    }

    fn finish(mut self, command: &str, cfg: &RunConfig, summary: Value) -> Result<()> {
        self.write("config.json", cfg.to_json_pretty() + "\n")?;
        let manifest = json!({
            "tool": "mibci",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": cfg.seed,
            "config": "config.json",
            "inputs": self.inputs,
            "outputs": self.outputs,
            "summary": summary,
        });
        let p = self.path("manifest.json");
        fs::write(&p, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&p, e))
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("input {} does not exist or is not a file", path.display())))
    }
}

fn history_csv(fit: &crate::numerics::FitOutcome) -> String {
    let mut s = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n");
    for r in &fit.history {
        s.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy));
    }
    s
}

fn check_compatible(tm: &TrainedModel, data: &FeatureMatrix) -> Result<()> {
    if (tm.channels, tm.samples) != (data.n_channels, data.n_samples) {
        return Err(Error::Shape(format!(
            "model expects {}×{} windows, dataset has {}×{}",
            tm.channels, tm.samples, data.n_channels, data.n_samples
        )));
    }
    Ok(())
}

fn write_report(run: &mut RunDir, rep: &ClassificationReport, cm: &crate::evaluation::ConfusionMatrix) -> Result<()> {
    run.write("report.json", serde_json::to_string_pretty(rep)? + "\n")?;
    run.write("report.txt", rep.render())?;
    run.write("confusion.csv", cm.to_csv())
}

fn score(tm: &TrainedModel, data: &FeatureMatrix) -> Result<(ClassificationReport, crate::evaluation::ConfusionMatrix)> {
    let pred = tm.model.predict(&data.x, data.n_rows())?;
    let cm = confusion(&data.y, &pred)?;
    Ok((metrics(&cm, tm.model.architecture().name())?, cm))
}

fn execute(cmd: &Command) -> Result<()> {
    let common = cmd.common();
    if let Some(c) = &common.config {
        require_file(c)?;
    }
    let mut overrides = common.overrides.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    overrides.extend(cmd.shortcuts()?);
    let cfg = RunConfig::load(common.config.as_deref(), &overrides)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(cmd.name()));

    // Validate input paths before any work starts.
    let inputs: Vec<&PathBuf> = match cmd {
        Command::Inspect { recordings, .. } | Command::Segment { recordings, .. } => recordings.iter().collect(),
        Command::Erp { dataset, .. } | Command::Train { dataset, .. } | Command::Crossval { dataset, .. } => vec![dataset],
        Command::Evaluate { model_file, dataset, .. } => vec![model_file, dataset],
        Command::Simulate { model_file, dataset, .. } => model_file.iter().chain([dataset]).collect(),
    };
    for p in &inputs {
        require_file(p)?;
    }
    let mut run = RunDir::create(out)?;
    for p in &inputs {
        run.input(p)?;
    }

    let summary = match cmd {
        Command::Inspect { recordings, .. } => {
            let mut items = Vec::new();
            for p in recordings {
                let rec = load_recording(p)?;
                let events = detect_onsets(rec.marker(), rec.sample_rate_hz());
                let by_code = [1u8, 2].map(|c| events.iter().filter(|e| e.code == c).count());
                println!(
                    "{}: {} samples at {} Hz, {} channels, {} events ({} right, {} left)",
                    rec.id(),
                    rec.n_samples(),
                    rec.sample_rate_hz(),
                    rec.n_channels(),
                    events.len(),
                    by_code[0],
                    by_code[1]
                );
                items.push(json!({
                    "path": p.display().to_string(),
                    "id": rec.id(),
                    "n_samples": rec.n_samples(),
                    "sample_rate_hz": rec.sample_rate_hz(),
                    "channels": rec.channel_names(),
                    "events": events.len(),
                    "events_right": by_code[0],
                    "events_left": by_code[1],
                }));
            }
            run.write("inspect.json", serde_json::to_string_pretty(&items)? + "\n")?;
            json!({ "recordings": items.len() })
        }
        Command::Segment { recordings, .. } => {
            let recs = recordings
                .iter()
                .map(|p| load_recording(p).map_err(|e| e.at_stage("load")))
                .collect::<Result<Vec<_>>>()?;
            let (ds, sources) = segment(&recs, &cfg.data, cfg.seed)?;
            let fm = flatten(&ds)?;
            write_feature_csv(&fm, run.path("features.csv"))?;
            run.record("features.csv")?;
            write_epoch_cache(&ds, run.path("epochs.eepo"))?;
            run.record("epochs.eepo")?;
            let counts = ds.class_counts();
            println!("{} rows × {} columns (rest {}, right {}, left {})", fm.n_rows(), fm.n_cols() + 1, counts[0], counts[1], counts[2]);
            json!({ "rows": fm.n_rows(), "columns": fm.n_cols() + 1, "class_counts": counts, "sources": sources })
        }
        Command::Erp { dataset, channel, sample_rate_hz, .. } => {
            let ds = load_epochs(dataset)?;
            let n_ch = ds.epochs().first().map_or(0, |e| e.n_channels);
            let names = retained_channels(&cfg.data.exclude_channels);
            let idx = resolve_channel(channel, &names, n_ch)?;
            let erps = class_erps(&ds, idx)?;
            run.write("erp.csv", erp_csv(&erps, *sample_rate_hz))?;
            let name = names.get(idx).filter(|_| names.len() == n_ch).map(|s| s.to_string());
            println!("ERP for channel {} over {} epochs", name.as_deref().unwrap_or(channel), ds.len());
            json!({ "channel_index": idx, "channel": name, "class_counts": ds.class_counts() })
        }
        Command::Train { dataset, .. } => {
            let fm = load_features(dataset)?;
            let (train_idx, test_idx) = split_indices(&fm.y, cfg.data.test_fraction, cfg.seed, cfg.data.stratify)?;
            let (train, test) = (fm.select(&train_idx), fm.select(&test_idx));
            let outcome = train_model(&cfg.model_spec()?, &train, &cfg.train_config())?;
            save_model(&outcome.model, run.path("model.miw"))?;
            run.record("model.miw")?;
            if let Some(fit) = &outcome.fit {
                run.write("history.csv", history_csv(fit))?;
            }
            let (rep, cm) = score(&outcome.model, &test)?;
            write_report(&mut run, &rep, &cm)?;
            print!("{}", rep.render());
            json!({
                "architecture": cfg.model.architecture,
                "train_rows": train.n_rows(),
                "test_rows": test.n_rows(),
                "best_epoch": outcome.model.best_epoch,
                "stopped_epoch": outcome.fit.as_ref().map(|f| f.stopped_epoch),
                "test_accuracy": rep.accuracy,
                "config_hash": outcome.model.config_hash,
            })
        }
        Command::Evaluate { model_file, dataset, subset, .. } => {
            let tm = load_model(model_file)?;
            let fm = load_features(dataset)?;
            check_compatible(&tm, &fm)?;
            let data = match subset {
                Subset::All => fm,
                Subset::Test => fm.select(&split_indices(&fm.y, cfg.data.test_fraction, cfg.seed, cfg.data.stratify)?.1),
            };
            let (rep, cm) = score(&tm, &data)?;
            write_report(&mut run, &rep, &cm)?;
            print!("{}", rep.render());
            json!({ "architecture": tm.model.architecture(), "rows": data.n_rows(), "accuracy": rep.accuracy })
        }
        Command::Crossval { dataset, .. } => {
            let fm = load_features(dataset)?;
            let res = cross_validate(
                &cfg.model_spec()?,
                &fm,
                cfg.crossval.folds,
                cfg.data.stratify,
                &cfg.train_config(),
                cfg.crossval.threads,
            )?;
            run.write("cv.json", serde_json::to_string_pretty(&res)? + "\n")?;
            run.write("cv.txt", res.render())?;
            print!("{}", res.render());
            json!({ "folds": res.folds.len(), "mean": res.mean, "sd_population": res.sd_population, "complete": res.complete })
        }
        Command::Simulate { dataset, model_file, .. } => {
            let fm = load_features(dataset)?;
            let stream = match model_file {
                Some(p) => {
                    let tm = load_model(p)?;
                    check_compatible(&tm, &fm)?;
                    decode_stream(&tm.model, &fm)?
                }
                None => fm.y.clone(),
            };
            let motor_path = run.path("motor_log.jsonl");
            let file = fs::File::create(&motor_path).map_err(|e| Error::io(&motor_path, e))?;
            let mut sink = LogSink::new(std::io::BufWriter::new(file));
            let log = run_simulation(&stream, &cfg.simulation, Pose::default(), &PinMap::default(), Some(&mut sink))?;
            std::io::Write::flush(&mut sink.into_inner()).map_err(|e| Error::io(&motor_path, e))?;
            run.record("motor_log.jsonl")?;
            run.write("trajectory.csv", log.to_csv())?;
            let end = log.final_pose();
            println!("{} ticks, final pose x={:.3} m y={:.3} m heading={:.4} rad", stream.len(), end.x, end.y, end.heading);
            json!({ "ticks": stream.len(), "final_pose": end, "path_length_m": log.path_length() })
        }
    };
    run.finish(cmd.name(), &cfg, summary)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
