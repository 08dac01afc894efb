//! Reverse-mode differentiation over 2-D `f64` tensors.
//!
//! A [`Graph`] records every op on a tape; [`Graph::backward`] walks it in
//! reverse and returns one gradient buffer per parameter in a [`ParamStore`].

mod checkpoint;
mod gradcheck;
mod optim;
mod graph;
mod params;
mod tensor;

use thiserror::Error;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::grad_check;
pub use optim::{clip_global_norm, AdamW, AdamWConfig};
pub use graph::{Grads, Graph, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op} produced a non-finite value")]
    NonFiniteValue { op: &'static str },
    #[error("{op}: every position is masked")]
    AllMasked { op: &'static str },
    #[error("{op}: row has zero norm")]
    ZeroNorm { op: &'static str },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParameter(String),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("file does not start with the expected magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("file is truncated")]
    TruncatedFile,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}
