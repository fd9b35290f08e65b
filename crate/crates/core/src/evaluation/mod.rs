//! Confusion matrices, classification reports and k-fold cross-validation.

pub mod confusion;
pub mod crossval;
pub mod report;

pub use confusion::{confusion, ConfusionMatrix};
pub use crossval::{accuracy, cross_validate, fold_statistics, kfold_split, CrossValResult, FoldFailure};
pub use report::{fmt_rounded, metrics, round_half_up, Average, ClassMetrics, ClassificationReport};
