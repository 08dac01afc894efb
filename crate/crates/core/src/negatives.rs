//! Hard negatives: transcriptions one or a few phoneme edits away from a positive.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use thiserror::Error;

use crate::ipa::{LanguageTag, PhonemeSequence, PhonemeSymbol};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NegativesError {
    #[error("phoneme inventory is empty")]
    InventoryEmpty,
    #[error("cannot edit an empty sequence")]
    EmptySequence,
    #[error("no applicable edit for this sequence and inventory")]
    NoApplicableEdit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditKind {
    Insert,
    Delete,
    Substitute,
}

const KINDS: [EditKind; 3] = [EditKind::Insert, EditKind::Delete, EditKind::Substitute];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditOp {
    pub kind: EditKind,
    pub position: usize,
    /// The new symbol for inserts and substitutions.
    pub symbol: Option<PhonemeSymbol>,
}

/// Segment symbols eligible as insertions and substitutions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeInventory {
    symbols: Vec<PhonemeSymbol>,
}

impl PhonemeInventory {
    /// Keeps the segment symbols (no stress marks, breaks or spaces), sorted and deduplicated.
    pub fn new(symbols: impl IntoIterator<Item = PhonemeSymbol>) -> Result<Self, NegativesError> {
        let set: BTreeSet<PhonemeSymbol> = symbols.into_iter().filter(PhonemeSymbol::is_segment).collect();
        if set.is_empty() {
            return Err(NegativesError::InventoryEmpty);
        }
        Ok(PhonemeInventory {
            symbols: set.into_iter().collect(),
        })
    }

    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a PhonemeSequence>) -> Result<Self, NegativesError> {
        Self::new(seqs.into_iter().flat_map(|s| s.symbols.iter().cloned()))
    }

    pub fn symbols(&self) -> &[PhonemeSymbol] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    fn draw_except<R: Rng + ?Sized>(&self, except: Option<&PhonemeSymbol>, rng: &mut R) -> Option<PhonemeSymbol> {
        let pool: Vec<&PhonemeSymbol> = self.symbols.iter().filter(|s| Some(*s) != except).collect();
        if pool.is_empty() {
            None
        } else {
            Some(pool[rng.gen_range(0..pool.len())].clone())
        }
    }
}

/// Inventories observed per language, with the union as a fallback.
#[derive(Debug, Clone)]
pub struct InventoryBook {
    by_lang: BTreeMap<LanguageTag, PhonemeInventory>,
    global: PhonemeInventory,
}

impl InventoryBook {
    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a PhonemeSequence> + Clone) -> Result<Self, NegativesError> {
        let global = PhonemeInventory::from_sequences(seqs.clone())?;
        let mut grouped: BTreeMap<LanguageTag, Vec<PhonemeSymbol>> = BTreeMap::new();
        for s in seqs {
            grouped.entry(s.lang.clone()).or_default().extend(s.symbols.iter().cloned());
        }
        let by_lang = grouped
            .into_iter()
            .filter_map(|(lang, syms)| PhonemeInventory::new(syms).ok().map(|inv| (lang, inv)))
            .collect();
        Ok(InventoryBook { by_lang, global })
    }

    pub fn for_lang(&self, lang: &LanguageTag) -> &PhonemeInventory {
        self.by_lang.get(lang).unwrap_or(&self.global)
    }

    pub fn global(&self) -> &PhonemeInventory {
        &self.global
    }
}

fn is_gap(symbols: &[PhonemeSymbol], i: isize) -> bool {
    i < 0 || i as usize >= symbols.len() || symbols[i as usize].base() == ' '
}

/// Positions whose deletion leaves at least one segment and no doubled,
/// leading or trailing word boundary.
fn deletable(symbols: &[PhonemeSymbol]) -> Vec<usize> {
    if symbols.iter().filter(|s| s.is_segment()).count() < 2 {
        return Vec::new();
    }
    (0..symbols.len())
        .filter(|&i| symbols[i].is_segment() && !(is_gap(symbols, i as isize - 1) && is_gap(symbols, i as isize + 1)))
        .collect()
}

/// Draws one edit: the kind uniformly, then a position, then a replacement
/// symbol from the inventory minus the symbol at the edit site. Infeasible
/// draws (deleting the only segment, no different symbol available) are
/// redrawn.
pub fn sample_edit<R: Rng + ?Sized>(
    seq: &PhonemeSequence,
    inv: &PhonemeInventory,
    rng: &mut R,
) -> Result<EditOp, NegativesError> {
    if inv.is_empty() {
        return Err(NegativesError::InventoryEmpty);
    }
    if seq.is_empty() {
        return Err(NegativesError::EmptySequence);
    }
    let s = &seq.symbols;
    let segments: Vec<usize> = (0..s.len()).filter(|&i| s[i].is_segment()).collect();
    let deletable = deletable(s);
    for _ in 0..1000 {
        match KINDS[rng.gen_range(0..3)] {
            EditKind::Insert => {
                let position = rng.gen_range(0..=s.len());
                if let Some(symbol) = inv.draw_except(s.get(position), rng) {
                    return Ok(EditOp {
                        kind: EditKind::Insert,
                        position,
                        symbol: Some(symbol),
                    });
                }
            }
            EditKind::Delete => {
                if !deletable.is_empty() {
                    return Ok(EditOp {
                        kind: EditKind::Delete,
                        position: deletable[rng.gen_range(0..deletable.len())],
                        symbol: None,
                    });
                }
            }
            EditKind::Substitute => {
                if segments.is_empty() {
                    continue;
                }
                let position = segments[rng.gen_range(0..segments.len())];
                if let Some(symbol) = inv.draw_except(Some(&s[position]), rng) {
                    return Ok(EditOp {
                        kind: EditKind::Substitute,
                        position,
                        symbol: Some(symbol),
                    });
                }
            }
        }
    }
    Err(NegativesError::NoApplicableEdit)
}

pub fn apply_edit(seq: &PhonemeSequence, op: &EditOp) -> PhonemeSequence {
    let mut symbols = seq.symbols.clone();
    match op.kind {
        EditKind::Insert => symbols.insert(op.position, op.symbol.clone().expect("insert carries a symbol")),
        EditKind::Delete => {
            symbols.remove(op.position);
        }
        EditKind::Substitute => symbols[op.position] = op.symbol.clone().expect("substitute carries a symbol"),
    }
    PhonemeSequence::new(symbols, seq.lang.clone())
}

/// A word-level hard negative: exactly one phoneme edit away from `seq`.
pub fn minimal_pair<R: Rng + ?Sized>(
    seq: &PhonemeSequence,
    inv: &PhonemeInventory,
    rng: &mut R,
) -> Result<PhonemeSequence, NegativesError> {
    let op = sample_edit(seq, inv, rng)?;
    Ok(apply_edit(seq, &op))
}

/// Number of edits for a sentence of `len` symbols at `rate`, at least one.
pub fn corruption_edits(len: usize, rate: f64) -> usize {
    ((rate * len as f64).floor() as usize).max(1)
}

/// An utterance-level hard negative: `max(1, ⌊rate·L⌋)` sequential edits,
/// redrawn if they happen to cancel out.
pub fn corrupt_sentence<R: Rng + ?Sized>(
    seq: &PhonemeSequence,
    rate: f64,
    inv: &PhonemeInventory,
    rng: &mut R,
) -> Result<PhonemeSequence, NegativesError> {
    let k = corruption_edits(seq.len(), rate);
    for _ in 0..100 {
        let mut cur = seq.clone();
        for _ in 0..k {
            let op = sample_edit(&cur, inv, rng)?;
            cur = apply_edit(&cur, &op);
        }
        if cur.symbols != seq.symbols {
            return Ok(cur);
        }
    }
    minimal_pair(seq, inv, rng)
}
