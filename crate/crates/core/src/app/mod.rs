//! Experiment layer: scene configuration files, the bundled scenes, and the
//! simulate / gradient-check / benchmark / optimize runs behind the CLI.
//! Every run can write its artifacts to an output directory together with a
//! manifest that identifies the configuration and files bitwise.

pub mod bench;
pub mod config;
pub mod gradcheck;
pub mod output;
pub mod scenes;
pub mod simulate;
pub mod sysid;

use std::path::PathBuf;

use thiserror::Error;

use crate::backward::BackwardError;
use crate::forward::ForwardError;
use crate::optimize::OptimizeError;

pub use bench::{run_benchmark, BenchOptions, BenchReport, BenchRow};
pub use config::SceneConfig;
pub use gradcheck::{run_gradcheck, GradcheckReport};
pub use output::{read_trajectory, write_trajectory, Manifest, OutputDir};
pub use simulate::{run_simulate, DiagnosticRow, SimulateReport};
pub use sysid::{run_optimize, Method, OptimizeReport};

#[derive(Debug, Error)]
pub enum AppError {
    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed trajectory file: {0}")]
    Trajectory(String),
    #[error("unknown optimization task `{task}`; available: {available}")]
    UnknownTask { task: String, available: String },
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Backward(#[from] BackwardError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
}
