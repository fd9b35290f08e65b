pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod numerics;
pub mod pipeline;
pub mod preprocess;
pub mod recording;
pub mod seed;
pub mod simulator;
pub mod synth;

pub use error::{Error, Result};
