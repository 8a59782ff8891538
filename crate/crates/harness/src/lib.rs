//! Synthetic benchmark, data pipeline, training, evaluation and ablations.

pub mod ablate;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod plot;
pub mod synth;
pub mod train;

pub use config::Config;
pub use error::{Error, Result};
