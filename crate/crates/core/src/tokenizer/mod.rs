//! Unigram language-model tokenizer for phonemic transcriptions.
//!
//! Ids are laid out as five special tokens, then 256 byte-fallback tokens,
//! then the learned pieces. All of them count against the vocabulary budget.

mod lattice;
mod trainer;
mod vocab_file;

use std::collections::HashMap;

use thiserror::Error;

pub use lattice::{best_segmentation, Segmentation};
pub use trainer::{train_unigram, TrainReport, TrainerConfig};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const MASK: u32 = 2;
pub const BOS: u32 = 3;
pub const EOS: u32 = 4;
pub const NUM_SPECIALS: u32 = 5;
pub const BYTE_OFFSET: u32 = NUM_SPECIALS;
pub const PIECE_OFFSET: u32 = BYTE_OFFSET + 256;

pub const SPECIAL_NAMES: [&str; NUM_SPECIALS as usize] = ["<pad>", "<unk>", "<mask>", "<bos>", "<eos>"];

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("training corpus is empty")]
    CorpusEmpty,
    #[error("vocabulary of {target} cannot hold {needed} required tokens")]
    TargetVocabTooSmall { target: usize, needed: usize },
    #[error("token id {0} is out of range")]
    InvalidTokenId(u32),
    #[error("duplicate piece {0:?}")]
    DuplicatePiece(String),
    #[error("piece {piece:?} has invalid log-probability {logprob}")]
    InvalidScore { piece: String, logprob: f64 },
    #[error("malformed vocabulary file at line {line}: {reason}")]
    BadVocabFile { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What an id stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token<'a> {
    Special(u32),
    Byte(u8),
    Piece(&'a str),
}

/// Trained pieces with log-probabilities plus the fixed special and byte ids.
#[derive(Debug, Clone, PartialEq)]
pub struct UnigramVocab {
    pieces: Vec<(String, f64)>,
    index: HashMap<String, u32>,
    max_piece_chars: usize,
    byte_fallback: bool,
}

impl UnigramVocab {
    pub fn from_pieces(pieces: Vec<(String, f64)>, byte_fallback: bool) -> Result<Self, TokenizerError> {
        let mut index = HashMap::with_capacity(pieces.len());
        let mut max_piece_chars = 1;
        for (i, (piece, logprob)) in pieces.iter().enumerate() {
            if !logprob.is_finite() || *logprob > 0.0 {
                return Err(TokenizerError::InvalidScore {
                    piece: piece.clone(),
                    logprob: *logprob,
                });
            }
            if piece.is_empty() || index.insert(piece.clone(), PIECE_OFFSET + i as u32).is_some() {
                return Err(TokenizerError::DuplicatePiece(piece.clone()));
            }
            max_piece_chars = max_piece_chars.max(piece.chars().count());
        }
        Ok(UnigramVocab {
            pieces,
            index,
            max_piece_chars,
            byte_fallback,
        })
    }

    /// Total number of ids, specials and bytes included.
    pub fn len(&self) -> usize {
        PIECE_OFFSET as usize + self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pieces(&self) -> &[(String, f64)] {
        &self.pieces
    }

    pub fn byte_fallback(&self) -> bool {
        self.byte_fallback
    }

    pub fn max_piece_chars(&self) -> usize {
        self.max_piece_chars
    }

    pub fn piece_id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn logprob(&self, id: u32) -> Option<f64> {
        id.checked_sub(PIECE_OFFSET)
            .and_then(|i| self.pieces.get(i as usize))
            .map(|(_, lp)| *lp)
    }

    pub fn token(&self, id: u32) -> Result<Token<'_>, TokenizerError> {
        if id < NUM_SPECIALS {
            Ok(Token::Special(id))
        } else if id < PIECE_OFFSET {
            Ok(Token::Byte((id - BYTE_OFFSET) as u8))
        } else {
            self.pieces
                .get((id - PIECE_OFFSET) as usize)
                .map(|(p, _)| Token::Piece(p.as_str()))
                .ok_or(TokenizerError::InvalidTokenId(id))
        }
    }

    pub fn is_special(id: u32) -> bool {
        id < NUM_SPECIALS
    }

    /// Score given to a character that no piece covers.
    pub(crate) fn fallback_score(&self) -> f64 {
        let min = self.pieces.iter().map(|(_, lp)| *lp).fold(0.0, f64::min);
        min - 10.0
    }

    /// Maximum-likelihood segmentation of `text`; characters outside the
    /// pieces become byte tokens (or UNK without byte fallback).
    pub fn encode(&self, text: &str) -> TokenSequence {
        let seg = best_segmentation(self, text);
        let mut ids = Vec::with_capacity(seg.units.len());
        for unit in &seg.units {
            match unit {
                lattice::Unit::Piece(id) => ids.push(*id),
                lattice::Unit::Fallback(c) if self.byte_fallback => {
                    let mut buf = [0u8; 4];
                    ids.extend(c.encode_utf8(&mut buf).bytes().map(|b| BYTE_OFFSET + u32::from(b)));
                }
                lattice::Unit::Fallback(_) => ids.push(UNK),
            }
        }
        TokenSequence::new(ids)
    }

    /// Concatenates pieces, reassembles byte runs as UTF-8 and drops specials.
    pub fn decode(&self, tokens: &TokenSequence) -> Result<String, TokenizerError> {
        self.decode_ids(tokens.valid_ids())
    }

    pub fn decode_ids(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        let mut bytes: Vec<u8> = Vec::new();
        for &id in ids {
            match self.token(id)? {
                Token::Byte(b) => {
                    bytes.push(b);
                    continue;
                }
                Token::Special(_) => {}
                Token::Piece(p) => {
                    flush_bytes(&mut bytes, &mut out);
                    out.push_str(p);
                }
            }
        }
        flush_bytes(&mut bytes, &mut out);
        Ok(out)
    }
}

fn flush_bytes(bytes: &mut Vec<u8>, out: &mut String) {
    if !bytes.is_empty() {
        out.push_str(&String::from_utf8_lossy(bytes));
        bytes.clear();
    }
}

/// Token ids with a validity mask; padding only as a suffix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        let mask = vec![true; ids.len()];
        TokenSequence { ids, mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().take_while(|&&m| m).count()
    }

    pub fn valid_ids(&self) -> &[u32] {
        &self.ids[..self.valid_len()]
    }

    /// Pads with `PAD` (mask 0) up to `len`; never truncates.
    pub fn padded(&self, len: usize) -> TokenSequence {
        let mut out = self.clone();
        while out.ids.len() < len {
            out.ids.push(PAD);
            out.mask.push(false);
        }
        out
    }

    /// Keeps at most `len` tokens.
    pub fn truncated(&self, len: usize) -> TokenSequence {
        TokenSequence {
            ids: self.ids.iter().copied().take(len).collect(),
            mask: self.mask.iter().copied().take(len).collect(),
        }
    }
}
