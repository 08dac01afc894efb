//! Viterbi search over the piece lattice of a string.

use std::cmp::Ordering;

use super::UnigramVocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Piece(u32),
    /// A character no piece covers.
    Fallback(char),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub units: Vec<Unit>,
    pub score: f64,
}

#[derive(Clone, Copy)]
struct Node {
    score: f64,
    tokens: usize,
    prev: usize,
    unit: Unit,
}

fn unit_text(vocab: &UnigramVocab, unit: Unit) -> String {
    match unit {
        Unit::Piece(id) => match vocab.token(id) {
            Ok(super::Token::Piece(p)) => p.to_string(),
            _ => unreachable!("lattice only holds piece ids"),
        },
        Unit::Fallback(c) => c.to_string(),
    }
}

fn path(vocab: &UnigramVocab, best: &[Option<Node>], mut end: usize) -> Vec<String> {
    let mut out = Vec::new();
    while end > 0 {
        let node = best[end].expect("reachable position");
        out.push(unit_text(vocab, node.unit));
        end = node.prev;
    }
    out.reverse();
    out
}

/// Highest-scoring segmentation. Near-equal scores (within 1e-12 relative)
/// prefer fewer tokens, then the lexicographically smaller piece at the first
/// place the two segmentations differ.
pub fn best_segmentation(vocab: &UnigramVocab, text: &str) -> Segmentation {
    let offsets: Vec<usize> = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()))
        .collect();
    let n = offsets.len() - 1;
    let fallback = vocab.fallback_score();
    let mut best: Vec<Option<Node>> = vec![None; n + 1];
    best[0] = Some(Node {
        score: 0.0,
        tokens: 0,
        prev: 0,
        unit: Unit::Fallback('\0'),
    });
    for end in 1..=n {
        let max_len = vocab.max_piece_chars().min(end);
        for len in 1..=max_len {
            let start = end - len;
            let Some(from) = best[start] else { continue };
            let piece = &text[offsets[start]..offsets[end]];
            let unit = match vocab.piece_id(piece) {
                Some(id) => (Unit::Piece(id), vocab.logprob(id).expect("piece id")),
                None if len == 1 => {
                    let c = piece.chars().next().expect("one char");
                    (Unit::Fallback(c), fallback)
                }
                None => continue,
            };
            let cand = Node {
                score: from.score + unit.1,
                tokens: from.tokens + 1,
                prev: start,
                unit: unit.0,
            };
            let replace = match best[end] {
                None => true,
                Some(cur) => {
                    let tol = 1e-12 * cur.score.abs().max(1.0);
                    if cand.score > cur.score + tol {
                        true
                    } else if cand.score < cur.score - tol {
                        false
                    } else {
                        match cand.tokens.cmp(&cur.tokens) {
                            Ordering::Less => true,
                            Ordering::Greater => false,
                            Ordering::Equal => {
                                let mut a = path(vocab, &best, start);
                                a.push(unit_text(vocab, cand.unit));
                                let b = path(vocab, &best, end);
                                a < b
                            }
                        }
                    }
                }
            };
            if replace {
                best[end] = Some(cand);
            }
        }
    }
    let mut units = Vec::new();
    let mut end = n;
    while end > 0 {
        let node = best[end].expect("every position is reachable through single characters");
        units.push(node.unit);
        end = node.prev;
    }
    units.reverse();
    Segmentation {
        units,
        score: best[n].map_or(0.0, |node| node.score),
    }
}
