//! Detection and retrieval metrics and the evaluation protocols.

mod metrics;
mod protocol;

use thiserror::Error;

use crate::encoders::EncoderError;
use crate::retrieval::RetrievalError;

pub use metrics::{
    auc, average_precision, eer, hit_at_k, mean_average_precision, mid_ranks, roc_points, spearman, RelevanceJudgment,
    ScoredPairSet,
};
pub use protocol::{
    embed_items, evaluate_detection, evaluate_retrieval, format_table, run_retrieval, write_report, DetectionPair,
    Direction, EvalItem, MetricRow,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("positive and negative score sets must both be non-empty")]
    EmptySide,
    #[error("scores must be finite")]
    NonFiniteScore,
    #[error("no relevance judgment for query {0:?}")]
    MissingJudgment(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("input is constant")]
    DegenerateConstantInput,
    #[error("query {0:?} has no other clip with the same transcription")]
    InsufficientPositives(String),
    #[error("no queries")]
    NoQueries,
    #[error("duplicate item id {0:?}")]
    DuplicateItem(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;
