use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::report::fmt_rounded;
use crate::models::{train_model, ModelSpec};
use crate::numerics::train::TrainConfig;
use crate::preprocess::{FeatureMatrix, N_CLASSES};
use crate::seed::rng_for;

/// Partitions `0..labels.len()` into `k` folds whose sizes differ by at most
/// one. Stratified folds also hold each class within ±1 of its share.
///
/// Rows are shuffled (per class when stratified), concatenated, and dealt
/// round-robin. Each fold comes back sorted.
pub fn kfold_split(labels: &[u8], k: usize, seed: u64, stratified: bool) -> Result<Vec<Vec<usize>>> {
    let n = labels.len();
    if k < 2 {
        return Err(Error::Parameter(format!("k = {k}, need at least 2 folds")));
    }
    if n < k {
        return Err(Error::Input(format!("{n} rows cannot fill {k} folds")));
    }
    let mut rng = rng_for(seed, "kfold");
    let order: Vec<usize> = if stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); N_CLASSES];
        for (i, &l) in labels.iter().enumerate() {
            let l = l as usize;
            if l >= N_CLASSES {
                return Err(Error::Label(format!("label {l} at row {i} outside 0..{N_CLASSES}")));
            }
            by_class[l].push(i);
        }
        for (c, rows) in by_class.iter().enumerate() {
            if !rows.is_empty() && rows.len() < k {
                return Err(Error::Stratification(format!("class {c} has {} rows, fewer than {k} folds", rows.len())));
            }
        }
        by_class
            .into_iter()
            .flat_map(|mut rows| {
                rows.shuffle(&mut rng);
                rows
            })
            .collect()
    } else {
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut rng);
        rows
    };
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, i) in order.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

/// Mean, population SD (÷N) and sample SD (÷N−1).
pub fn fold_statistics(folds: &[f64]) -> (f64, f64, f64) {
    let n = folds.len() as f64;
    if folds.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = folds.iter().sum::<f64>() / n;
    let ss = folds.iter().map(|a| (a - mean).powi(2)).sum::<f64>();
    let sample = if folds.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, (ss / n).sqrt(), sample)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub fold: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValResult {
    pub model: String,
    /// Accuracy of each completed fold, in fold order.
    pub folds: Vec<f64>,
    pub mean: f64,
    pub sd_population: f64,
    pub sd_sample: f64,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FoldFailure>,
}

impl CrossValResult {
    pub fn from_folds(model: &str, folds: Vec<f64>) -> Self {
        let (mean, sd_population, sd_sample) = fold_statistics(&folds);
        Self { model: model.to_string(), folds, mean, sd_population, sd_sample, complete: true, failures: vec![] }
    }

    /// Fold accuracies and the mean at two decimals, SD at three.
    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{}", self.model).unwrap();
        for (i, a) in self.folds.iter().enumerate() {
            writeln!(s, "{:<8}{}", format!("Fold {}", i + 1), fmt_rounded(*a, 2)).unwrap();
        }
        writeln!(s, "{:<8}{}", "Mean", fmt_rounded(self.mean, 2)).unwrap();
        writeln!(s, "{:<8}{}", "SD", fmt_rounded(self.sd_population, 3)).unwrap();
        for f in &self.failures {
            writeln!(s, "fold {} failed: {}", f.fold + 1, f.error).unwrap();
        }
        s
    }
}

/// Accuracy of `pred` against `truth`.
pub fn accuracy(truth: &[u8], pred: &[u8]) -> f64 {
    truth.iter().zip(pred).filter(|(a, b)| a == b).count() as f64 / truth.len().max(1) as f64
}

/// Trains a fresh model on every `k − 1` folds and scores it on the held-out
/// fold. Fold `i` trains with seed `train.seed + i`.
///
/// Folds run on up to `threads` worker threads; results are keyed by fold so
/// the outcome does not depend on scheduling. A failing fold is recorded and
/// the result marked incomplete; if every fold fails the first error is
/// returned.
pub fn cross_validate(
    spec: &ModelSpec,
    data: &FeatureMatrix,
    k: usize,
    stratified: bool,
    train: &TrainConfig,
    threads: usize,
) -> Result<CrossValResult> {
    let folds = kfold_split(&data.y, k, train.seed, stratified)?;
    let results: Mutex<Vec<Option<Result<f64>>>> = Mutex::new((0..k).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let run_fold = |f: usize| -> Result<f64> {
        let held = &folds[f];
        let mut in_held = vec![false; data.n_rows()];
        held.iter().for_each(|&i| in_held[i] = true);
        let rest: Vec<usize> = (0..data.n_rows()).filter(|&i| !in_held[i]).collect();
        let cfg = TrainConfig { seed: train.seed.wrapping_add(f as u64), ..train.clone() };
        let outcome = train_model(spec, &data.select(&rest), &cfg)?;
        let test = data.select(held);
        let pred = outcome.model.model.predict(&test.x, test.n_rows())?;
        log::info!("fold {}/{k} done", f + 1);
        Ok(accuracy(&test.y, &pred))
    };
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, k) {
            s.spawn(|| loop {
                let f = next.fetch_add(1, Ordering::SeqCst);
                if f >= k {
                    break;
                }
                let r = run_fold(f);
                results.lock().unwrap()[f] = Some(r);
            });
        }
    });

    let mut accs = Vec::with_capacity(k);
    let mut failures = Vec::new();
    let mut first_err = None;
    for (fold, r) in results.into_inner().unwrap().into_iter().enumerate() {
        match r.expect("every fold ran") {
            Ok(a) => accs.push(a),
            Err(e) => {
                failures.push(FoldFailure { fold, error: e.to_string() });
                first_err.get_or_insert(e);
            }
        }
    }
    if accs.is_empty() {
        return Err(first_err.expect("at least one fold"));
    }
    let mut out = CrossValResult::from_folds(spec.architecture().name(), accs);
    out.complete = failures.is_empty();
    out.failures = failures;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Architecture, LogregConfig};
    use crate::synth::separable_epochs;
    use std::collections::BTreeSet;

    #[test]
    fn fold_sizes() {
        let sizes = |n: usize| {
            let labels: Vec<u8> = (0..n).map(|i| (i % 3) as u8).collect();
            let mut s: Vec<usize> = kfold_split(&labels, 10, 1, false).unwrap().iter().map(Vec::len).collect();
            s.sort_unstable();
            s
        };
        assert_eq!(sizes(20), vec![2; 10]);
        assert_eq!(sizes(23), [vec![2; 7], vec![3; 3]].concat());
    }

    #[test]
    fn stratified_balance_and_errors() {
        let labels: Vec<u8> = (0..95).map(|i| if i < 40 { 0 } else if i < 75 { 1 } else { 2 }).collect();
        let folds = kfold_split(&labels, 10, 3, true).unwrap();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for c in 0..3u8 {
            let per: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| labels[i] == c).count()).collect();
            assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1, "class {c}: {per:?}");
        }
        let small: Vec<u8> = (0..30).map(|i| if i < 5 { 2 } else { (i % 2) as u8 }).collect();
        assert!(matches!(kfold_split(&small, 10, 0, true), Err(Error::Stratification(_))));
        assert!(kfold_split(&small, 10, 0, false).is_ok());
        assert!(matches!(kfold_split(&[0; 5], 10, 0, false), Err(Error::Input(_))));
    }

    #[test]
    fn folds_partition_for_any_seed() {
        let labels: Vec<u8> = (0..61).map(|i| ((i * 7) % 3) as u8).collect();
        for seed in 0..25 {
            for strat in [false, true] {
                let folds = kfold_split(&labels, 10, seed, strat).unwrap();
                let all: BTreeSet<usize> = folds.iter().flatten().copied().collect();
                assert_eq!(folds.iter().map(Vec::len).sum::<usize>(), 61);
                assert_eq!(all, (0..61).collect());
            }
        }
        assert_eq!(kfold_split(&labels, 10, 4, true).unwrap(), kfold_split(&labels, 10, 4, true).unwrap());
    }

    #[test]
    fn statistics() {
        let (m, pop, samp) = fold_statistics(&[0.9; 10]);
        assert!((m - 0.9).abs() < 1e-12 && pop.abs() < 1e-12 && samp.abs() < 1e-12);
        let (m, pop, samp) = fold_statistics(&[1.0, 3.0]);
        assert_eq!((m, pop), (2.0, 1.0));
        assert!((samp - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cross_validates_logreg_deterministically() {
        let fm = separable_epochs(10, 3, 4, 2.0, 0.5, 5);
        let spec = ModelSpec::Logreg(LogregConfig { iterations: 50, ..Default::default() });
        let cfg = TrainConfig::default();
        let a = cross_validate(&spec, &fm, 10, true, &cfg, 4).unwrap();
        let b = cross_validate(&spec, &fm, 10, true, &cfg, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.folds.len(), 10);
        assert!(a.complete);
        assert!(a.mean > 0.9);
        assert_eq!(a.model, Architecture::Logreg.name());
    }

    #[test]
    fn failing_folds_surface() {
        let mut fm = separable_epochs(10, 2, 2, 2.0, 0.5, 5);
        fm.x[0] = f64::NAN;
        let spec = ModelSpec::default_for(Architecture::Logreg);
        // row 0 sits in the training set of nine folds; those fail, one survives
        let r = cross_validate(&spec, &fm, 10, false, &TrainConfig::default(), 2).unwrap();
        assert!(!r.complete);
        assert_eq!(r.folds.len(), 1);
        assert_eq!(r.failures.len(), 9);
    }
}
