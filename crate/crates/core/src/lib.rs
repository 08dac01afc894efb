//! Phoneme/speech contrastive embeddings for open-vocabulary keyword retrieval.

pub mod ipa;
pub mod tokenizer;
pub mod audio;
pub mod numerics;
mod binio;
pub mod encoders;
pub mod negatives;
pub mod training;
pub mod corpus;
pub mod retrieval;
pub mod eval;
