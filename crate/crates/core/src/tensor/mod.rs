//! Dense numerics for small policy and value networks.
//!
//! Everything here is double precision and allocation-light; the networks
//! involved are a few thousand parameters, evaluated one sample at a time.

mod adam;
mod checkpoint;
mod matrix;
mod mlp;
mod sample;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC, VERSION};
pub use matrix::Matrix;
pub use mlp::{
    log_softmax, mlp_backward, mlp_backward_logits, mlp_forward, softmax, ForwardCache, Gradients, Head,
    MlpParams,
};
pub use sample::{argmax, sample_categorical};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("activation cache does not belong to these parameters (cache generation {cache}, params generation {params})")]
    StaleCache { cache: u64, params: u64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint io: {0}")]
    Io(String),
}

impl From<std::io::Error> for TensorError {
    fn from(e: std::io::Error) -> Self {
        TensorError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;
