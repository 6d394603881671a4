//! Experiment driver: config files and presets, single pipeline runs with
//! resumable stages, the algorithm × task × seed benchmark, and reports over
//! a results tree.

pub mod benchmark;
pub mod config;
pub mod pipeline;
pub mod presets;
pub mod report;

use std::path::{Path, PathBuf};

use sppo::diagnostics::DiagnosticsError;
use sppo::tensor::TensorError;
use sppo::train::TrainError;
use thiserror::Error;

pub use config::{load_config, parse_config, ConfigError, ExperimentConfig};

/// Names the root under which default output directories are created.
pub const OUTPUT_ROOT_VAR: &str = "SPPO_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("no fine-tuning runs found under {0}")]
    EmptyTree(String),
    #[error("{failed} of {total} benchmark cells failed")]
    CellsFailed { failed: usize, total: usize },
}

impl CliError {
    pub const CONFIG_EXIT: u8 = 2;
    pub const RUNTIME_EXIT: u8 = 1;

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => Self::CONFIG_EXIT,
            _ => Self::RUNTIME_EXIT,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// `$SPPO_OUTPUT_ROOT`, or the working directory.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

/// Relative paths are taken from the output root; absolute ones as given.
pub fn under_root(path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        output_root().join(path)
    }
}
