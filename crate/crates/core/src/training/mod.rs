//! Contrastive training: the sigmoid pair loss, the learning-rate schedule
//! and the batch loop with hard negatives.

mod config;
mod data;
mod loss;
mod trainer;

use thiserror::Error;

use crate::audio::AudioError;
use crate::corpus::CorpusError;
use crate::encoders::EncoderError;
use crate::negatives::NegativesError;
use crate::numerics::NumericsError;

pub use config::{lr_schedule, TrainConfig};
pub use data::{featurize, items_from_manifest, items_from_synthetic};
pub use loss::{cosine_similarity, cosine_similarity_matrix, siglip_loss, siglip_terms, PairLabels};
pub use trainer::{
    batch_loss, tokenize_phonemes, train_loop, SourceLevel, StepMetrics, TrainItem, TrainSource, Trainer,
    METRICS_HEADER,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("a row to compare has zero norm")]
    ZeroNormRow,
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("no training items")]
    ManifestEmpty,
    #[error("invalid pair labels: {0}")]
    BadLabels(String),
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Negatives(#[from] NegativesError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;
