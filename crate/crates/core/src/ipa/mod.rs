//! Phonemic transcriptions: normalization, segmentation into phoneme symbols,
//! X-SAMPA conversion and symbol-level edit distance.
//!
//! Text is kept in canonical decomposed form (NFD), so a precomposed `á` and
//! `a` + U+0301 are the same symbol. Stress marks, tone letters and tie bars
//! survive normalization verbatim; every character outside the bundled
//! whitelist is dropped.

mod distance;
mod table;
mod xsampa;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub use distance::{edit_distance, phoneme_edit_distance};
pub use table::{class_of, whitelist, CharClass};
pub use xsampa::{ipa_to_xsampa, xsampa_to_ipa};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IpaError {
    #[error("no IPA content left after normalization")]
    EmptyAfterNormalization,
    #[error("combining mark or modifier without a preceding base at byte {offset}")]
    DanglingModifier { offset: usize },
    #[error("tie bar without a base on both sides at byte {offset}")]
    DanglingTieBar { offset: usize },
    #[error("character {ch:?} at byte {offset} is not in the IPA whitelist")]
    NotWhitelisted { ch: char, offset: usize },
    #[error("unknown X-SAMPA token at byte {offset}")]
    UnknownXsampaToken { offset: usize },
    #[error("invalid ISO 639-3 language tag {0:?}")]
    InvalidLanguageTag(String),
    #[error("malformed line {line} in table {table}")]
    BadTable { table: String, line: usize },
}

/// ISO 639-3 code, or `und` when unknown.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageTag(String);

impl LanguageTag {
    pub fn undetermined() -> Self {
        LanguageTag("und".to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for LanguageTag {
    type Err = IpaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() == 3 && s.bytes().all(|b| b.is_ascii_lowercase()) {
            Ok(LanguageTag(s.to_string()))
        } else {
            Err(IpaError::InvalidLanguageTag(s.to_string()))
        }
    }
}

impl TryFrom<String> for LanguageTag {
    type Error = IpaError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<LanguageTag> for String {
    fn from(tag: LanguageTag) -> String {
        tag.0
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Second half of a tie-bar affricate such as `t͡ʃ`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tie {
    pub bar: char,
    pub base: char,
    pub modifiers: Vec<char>,
}

/// One phoneme: a base character with its trailing marks, optionally tied to
/// a second base. Stress marks, prosodic breaks and word boundaries are
/// standalone symbols with no modifiers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhonemeSymbol {
    base: char,
    modifiers: Vec<char>,
    tie: Option<Tie>,
}

impl PhonemeSymbol {
    /// A bare base character.
    pub fn new(base: char) -> Result<Self, IpaError> {
        match class_of(base) {
            Some(CharClass::Base | CharClass::Supra | CharClass::Space) => Ok(PhonemeSymbol {
                base,
                modifiers: Vec::new(),
                tie: None,
            }),
            _ => Err(IpaError::NotWhitelisted { ch: base, offset: 0 }),
        }
    }

    /// Builds and validates a full symbol.
    pub fn from_parts(base: char, modifiers: Vec<char>, tie: Option<Tie>) -> Result<Self, IpaError> {
        let sym = PhonemeSymbol { base, modifiers, tie };
        let text = sym.to_string();
        let mut parsed = segment_phonemes(&text)?;
        if parsed.len() == 1 && parsed[0] == sym {
            Ok(parsed.remove(0))
        } else {
            Err(IpaError::DanglingModifier { offset: 0 })
        }
    }

    pub fn base(&self) -> char {
        self.base
    }

    pub fn modifiers(&self) -> &[char] {
        &self.modifiers
    }

    pub fn tie(&self) -> Option<&Tie> {
        self.tie.as_ref()
    }

    pub fn is_tied(&self) -> bool {
        self.tie.is_some()
    }

    pub fn class(&self) -> CharClass {
        class_of(self.base).expect("symbols are built from whitelisted bases")
    }

    /// True for consonant/vowel segments, false for stress marks, breaks and spaces.
    pub fn is_segment(&self) -> bool {
        self.class() == CharClass::Base
    }
}

impl fmt::Display for PhonemeSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use fmt::Write;
        f.write_char(self.base)?;
        for &m in &self.modifiers {
            f.write_char(m)?;
        }
        if let Some(tie) = &self.tie {
            f.write_char(tie.bar)?;
            f.write_char(tie.base)?;
            for &m in &tie.modifiers {
                f.write_char(m)?;
            }
        }
        Ok(())
    }
}

/// A normalized transcription with its language and the text it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeSequence {
    pub symbols: Vec<PhonemeSymbol>,
    pub lang: LanguageTag,
    pub raw: String,
}

impl PhonemeSequence {
    pub fn new(symbols: Vec<PhonemeSymbol>, lang: LanguageTag) -> Self {
        let raw = serialize(&symbols);
        PhonemeSequence { symbols, lang, raw }
    }

    /// The normalized text of the symbols.
    pub fn text(&self) -> String {
        serialize(&self.symbols)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

pub fn serialize(symbols: &[PhonemeSymbol]) -> String {
    symbols.iter().map(ToString::to_string).collect()
}

/// Normalizes raw transcription text into a phoneme sequence tagged `und`.
pub fn normalize_ipa(raw: &str) -> Result<PhonemeSequence, IpaError> {
    normalize_ipa_with_lang(raw, LanguageTag::undetermined())
}

pub fn normalize_ipa_with_lang(raw: &str, lang: LanguageTag) -> Result<PhonemeSequence, IpaError> {
    let mut filtered = String::with_capacity(raw.len());
    let mut pending_space = false;
    for c in raw.nfd() {
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if class_of(c).is_none() {
            continue;
        }
        if pending_space && !filtered.is_empty() {
            filtered.push(' ');
        }
        pending_space = false;
        filtered.push(c);
    }
    // Removing characters can leave marks out of canonical order.
    let filtered: String = filtered.nfd().collect();
    let symbols = segment_lenient(&filtered);
    if !symbols.iter().any(PhonemeSymbol::is_segment) {
        return Err(IpaError::EmptyAfterNormalization);
    }
    Ok(PhonemeSequence {
        symbols,
        lang,
        raw: raw.to_string(),
    })
}

/// Convenience: the normalized text of `raw`.
pub fn normalize_text(raw: &str) -> Result<String, IpaError> {
    normalize_ipa(raw).map(|seq| seq.text())
}

/// Splits normalized text into symbols. Each base takes its trailing marks;
/// a tie bar fuses its two flanking bases.
pub fn segment_phonemes(normalized: &str) -> Result<Vec<PhonemeSymbol>, IpaError> {
    Segmenter { strict: true }.run(normalized)
}

/// Like [`segment_phonemes`] but drops dangling marks and tie bars instead of failing,
/// and collapses boundary runs.
fn segment_lenient(text: &str) -> Vec<PhonemeSymbol> {
    let mut symbols = Segmenter { strict: false }
        .run(text)
        .expect("lenient segmentation never fails");
    // Boundaries only between segments: no leading, trailing or repeated spaces.
    symbols.dedup_by(|b, a| a.class() == CharClass::Space && b.class() == CharClass::Space);
    while symbols.first().is_some_and(|s| s.class() == CharClass::Space) {
        symbols.remove(0);
    }
    while symbols.last().is_some_and(|s| s.class() == CharClass::Space) {
        symbols.pop();
    }
    symbols
}

struct Segmenter {
    strict: bool,
}

impl Segmenter {
    fn run(&self, text: &str) -> Result<Vec<PhonemeSymbol>, IpaError> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut out: Vec<PhonemeSymbol> = Vec::new();
        // Whether the last symbol in `out` can still take marks.
        let mut open = false;
        let mut i = 0;
        while i < chars.len() {
            let (offset, c) = chars[i];
            let class = match class_of(c) {
                Some(class) => class,
                None if self.strict => return Err(IpaError::NotWhitelisted { ch: c, offset }),
                None => {
                    i += 1;
                    continue;
                }
            };
            match class {
                CharClass::Base => {
                    out.push(PhonemeSymbol {
                        base: c,
                        modifiers: Vec::new(),
                        tie: None,
                    });
                    open = true;
                }
                CharClass::Supra | CharClass::Space => {
                    out.push(PhonemeSymbol {
                        base: c,
                        modifiers: Vec::new(),
                        tie: None,
                    });
                    open = false;
                }
                CharClass::Mark | CharClass::Modifier => {
                    if open {
                        let sym = out.last_mut().expect("open implies a symbol");
                        match &mut sym.tie {
                            Some(tie) => tie.modifiers.push(c),
                            None => sym.modifiers.push(c),
                        }
                    } else if self.strict {
                        return Err(IpaError::DanglingModifier { offset });
                    }
                }
                CharClass::Tie => {
                    let next = chars.get(i + 1).copied();
                    let next_is_base =
                        next.is_some_and(|(_, n)| class_of(n) == Some(CharClass::Base));
                    let can_tie = open && out.last().is_some_and(|s| s.tie.is_none());
                    if can_tie && next_is_base {
                        let (_, second) = next.expect("checked above");
                        let sym = out.last_mut().expect("open implies a symbol");
                        sym.tie = Some(Tie {
                            bar: c,
                            base: second,
                            modifiers: Vec::new(),
                        });
                        i += 2;
                        continue;
                    } else if self.strict {
                        return Err(IpaError::DanglingTieBar { offset });
                    }
                }
            }
            i += 1;
        }
        Ok(out)
    }
}
