//! Dense tensors, a reverse-mode tape, Adam and the shared training loop.

pub mod dropout;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod train;

pub use dropout::{dropout, dropout_node, Mode};
pub use gradcheck::{check_gradients, check_network_loss, relative_error, GradCheckReport};
pub use optim::{clip_global_norm, AdamConfig, AdamState};
pub use params::{glorot_uniform, l2_penalty, l2_penalty_node, Param, ParamKind, ParamSet};
pub use tape::{Gradients, NormStats, Tape, Var};
pub use tensor::Tensor;
pub use train::{
    fit_until, fit_with_early_stopping, full_batch_losses, train, EpochLearner, EpochRecord, FitOutcome, Forward, Network,
    NormUpdate, TrainConfig,
};
