use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square count matrix, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    /// Tallies `n_classes × n_classes` counts.
    pub fn from_labels(y_true: &[u8], y_pred: &[u8], n_classes: usize) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::Input(format!("{} true labels vs {} predictions", y_true.len(), y_pred.len())));
        }
        let mut counts = vec![vec![0u64; n_classes]; n_classes];
        for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
            if t as usize >= n_classes || p as usize >= n_classes {
                return Err(Error::Input(format!("label pair ({t}, {p}) at row {i} outside 0..{n_classes}")));
            }
            counts[t as usize][p as usize] += 1;
        }
        Ok(Self { counts })
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::Input("confusion counts must form a non-empty square matrix".into()));
        }
        Ok(Self { counts })
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Row sums.
    pub fn supports(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Column sums.
    pub fn predicted(&self) -> Vec<u64> {
        (0..self.n_classes()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    /// Header `pred_0,…` then one row of counts per true class.
    pub fn to_csv(&self) -> String {
        let k = self.n_classes();
        let mut s = (0..k).map(|j| format!("pred_{j}")).collect::<Vec<_>>().join(",");
        s.push('\n');
        for row in &self.counts {
            let line = row.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
            writeln!(s, "{line}").unwrap();
        }
        s
    }
}

pub fn confusion(y_true: &[u8], y_pred: &[u8]) -> Result<ConfusionMatrix> {
    ConfusionMatrix::from_labels(y_true, y_pred, crate::preprocess::N_CLASSES)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_count() {
        let cm = confusion(&[0, 0, 1], &[0, 1, 1]).unwrap();
        assert_eq!(cm.counts(), &[vec![1, 1, 0], vec![0, 1, 0], vec![0, 0, 0]]);
        assert_eq!(cm.supports(), vec![2, 1, 0]);
        assert_eq!(cm.predicted(), vec![1, 2, 0]);
    }

    #[test]
    fn identical_labels_give_diagonal() {
        let y = [2, 0, 1, 1, 2, 2];
        let cm = confusion(&y, &y).unwrap();
        assert_eq!(cm.counts(), &[vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 3]]);
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(confusion(&[0, 1], &[0]), Err(Error::Input(_))));
        assert!(matches!(confusion(&[0, 3], &[0, 1]), Err(Error::Input(_))));
        assert!(matches!(ConfusionMatrix::from_counts(vec![vec![1, 2]]), Err(Error::Input(_))));
    }

    #[test]
    fn csv_layout() {
        let cm = confusion(&[0, 1, 2], &[0, 2, 2]).unwrap();
        assert_eq!(cm.to_csv(), "pred_0,pred_1,pred_2\n1,0,0\n0,0,1\n0,0,1\n");
    }
}
