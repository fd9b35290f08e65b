use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::confusion::ConfusionMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Average {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub model: String,
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    #[serde(rename = "macro")]
    pub macro_avg: Average,
    pub weighted: Average,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest precision, recall and F1 per class, plus accuracy and the
/// macro and support-weighted averages. Zero denominators give 0.
pub fn metrics(cm: &ConfusionMatrix, model: &str) -> Result<ClassificationReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Input("confusion matrix is empty".into()));
    }
    let supports = cm.supports();
    let predicted = cm.predicted();
    let classes: Vec<ClassMetrics> = (0..cm.n_classes())
        .map(|c| {
            let tp = cm.get(c, c);
            let precision = ratio(tp, predicted[c]);
            let recall = ratio(tp, supports[c]);
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            ClassMetrics { label: c, precision, recall, f1, support: supports[c] }
        })
        .collect();
    let k = classes.len() as f64;
    let macro_avg = Average {
        precision: classes.iter().map(|m| m.precision).sum::<f64>() / k,
        recall: classes.iter().map(|m| m.recall).sum::<f64>() / k,
        f1: classes.iter().map(|m| m.f1).sum::<f64>() / k,
        support: total,
    };
    let w = |f: fn(&ClassMetrics) -> f64| classes.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64;
    let weighted = Average { precision: w(|m| m.precision), recall: w(|m| m.recall), f1: w(|m| m.f1), support: total };
    Ok(ClassificationReport { model: model.to_string(), classes, accuracy: ratio(cm.trace(), total), macro_avg, weighted })
}

/// Rounds half away from zero at `decimals` places. A 1e-9 nudge keeps
/// values like 0.125 that are stored just below the midpoint from rounding
/// down.
pub fn round_half_up(v: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (v.abs() * scale + 0.5 + 1e-9).floor() / scale * v.signum()
}

pub fn fmt_rounded(v: f64, decimals: u32) -> String {
    format!("{:.*}", decimals as usize, round_half_up(v, decimals))
}

impl ClassificationReport {
    /// Plain-text table with two-decimal rates.
    pub fn render(&self) -> String {
        let r = |v: f64| fmt_rounded(v, 2);
        let mut s = String::new();
        writeln!(s, "{}", self.model).unwrap();
        writeln!(s, "{:>14}{:>11}{:>10}{:>10}{:>10}", "", "precision", "recall", "f1-score", "support").unwrap();
        writeln!(s).unwrap();
        for m in &self.classes {
            writeln!(s, "{:>14}{:>11}{:>10}{:>10}{:>10}", m.label, r(m.precision), r(m.recall), r(m.f1), m.support).unwrap();
        }
        writeln!(s).unwrap();
        writeln!(s, "{:>14}{:>11}{:>10}{:>10}{:>10}", "accuracy", "", "", r(self.accuracy), self.weighted.support).unwrap();
        for (name, a) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted)] {
            writeln!(s, "{:>14}{:>11}{:>10}{:>10}{:>10}", name, r(a.precision), r(a.recall), r(a.f1), a.support).unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::confusion::confusion;
    use proptest::prelude::*;

    #[test]
    fn rounding_rule() {
        assert_eq!(fmt_rounded(658.0 / 762.0, 2), "0.86");
        assert_eq!(fmt_rounded(0.125, 2), "0.13");
        assert_eq!(fmt_rounded(0.0140, 3), "0.014");
        assert_eq!(fmt_rounded(0.845, 2), "0.85");
        assert_eq!(fmt_rounded(1.0, 2), "1.00");
    }

    #[test]
    fn hook_two_class() {
        let cm = ConfusionMatrix::from_counts(vec![vec![2, 1], vec![1, 2]]).unwrap();
        let rep = metrics(&cm, "hook").unwrap();
        for m in &rep.classes {
            assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
            assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
            assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        }
        assert!((rep.accuracy - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_scores_zero() {
        let rep = metrics(&confusion(&[0, 0, 1], &[0, 0, 0]).unwrap(), "m").unwrap();
        assert_eq!(rep.classes[1].precision, 0.0);
        assert_eq!(rep.classes[2].recall, 0.0);
        assert_eq!(rep.classes[2].f1, 0.0);
        assert!(matches!(metrics(&ConfusionMatrix::from_counts(vec![vec![0]]).unwrap(), "m"), Err(Error::Input(_))));
    }

    #[test]
    fn json_round_trips() {
        let rep = metrics(&confusion(&[0, 1, 2, 2], &[0, 2, 2, 1]).unwrap(), "m").unwrap();
        let v = serde_json::to_value(&rep).unwrap();
        assert!(v["macro"]["f1"].is_number());
        assert_eq!(v["classes"][0]["label"], 0);
        let back: ClassificationReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, rep);
    }

    /// Per-sample one-vs-rest counting, independent of the matrix.
    fn brute(y: &[u8], p: &[u8]) -> (f64, Vec<(f64, f64, f64)>) {
        let acc = y.iter().zip(p).filter(|(a, b)| a == b).count() as f64 / y.len() as f64;
        let per = (0..3u8)
            .map(|c| {
                let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
                for (&t, &q) in y.iter().zip(p) {
                    match (t == c, q == c) {
                        (true, true) => tp += 1.0,
                        (false, true) => fp += 1.0,
                        (true, false) => fn_ += 1.0,
                        _ => {}
                    }
                }
                let pr = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
                let re = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
                let f = if pr + re > 0.0 { 2.0 * pr * re / (pr + re) } else { 0.0 };
                (pr, re, f)
            })
            .collect();
        (acc, per)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn matches_brute_force(pairs in prop::collection::vec((0u8..3, 0u8..3), 1..60)) {
            let (y, p): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
            let rep = metrics(&confusion(&y, &p).unwrap(), "m").unwrap();
            let (acc, per) = brute(&y, &p);
            prop_assert!((rep.accuracy - acc).abs() < 1e-12);
            for (m, (pr, re, f)) in rep.classes.iter().zip(per) {
                prop_assert!((m.precision - pr).abs() < 1e-12);
                prop_assert!((m.recall - re).abs() < 1e-12);
                prop_assert!((m.f1 - f).abs() < 1e-12);
            }
            prop_assert!((rep.weighted.recall - rep.accuracy).abs() < 1e-12);

            let mut rev_y = y.clone();
            let mut rev_p = p.clone();
            rev_y.reverse();
            rev_p.reverse();
            prop_assert_eq!(metrics(&confusion(&rev_y, &rev_p).unwrap(), "m").unwrap(), rep);

            let perfect = metrics(&confusion(&y, &y).unwrap(), "m").unwrap();
            prop_assert_eq!(perfect.accuracy, 1.0);
            for m in perfect.classes.iter().filter(|m| m.support > 0) {
                prop_assert_eq!(m.f1, 1.0);
            }
        }
    }
}
