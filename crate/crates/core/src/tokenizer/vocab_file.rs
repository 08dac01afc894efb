//! Plain-text vocabulary files: a header, then one `piece<TAB>logprob` per line.

use std::fs;
use std::path::Path;

use super::{TokenizerError, UnigramVocab, SPECIAL_NAMES};

const MAGIC: &str = "# phonokws unigram vocab v1";

fn escape(piece: &str) -> String {
    let mut out = String::with_capacity(piece.len());
    for (i, c) in piece.chars().enumerate() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '#' if i == 0 => out.push_str("\\#"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str, line: usize) -> Result<String, TokenizerError> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('#') => out.push('#'),
            other => {
                return Err(TokenizerError::BadVocabFile {
                    line,
                    reason: format!("bad escape \\{}", other.map(String::from).unwrap_or_default()),
                })
            }
        }
    }
    Ok(out)
}

impl UnigramVocab {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{MAGIC}\n#special\t{}\n#byte_fallback\t{}\n",
            SPECIAL_NAMES.join("\t"),
            self.byte_fallback
        );
        for (piece, lp) in &self.pieces {
            // `Display` for f64 prints the shortest string that parses back exactly.
            out.push_str(&format!("{}\t{}\n", escape(piece), lp));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let bad = |line: usize, reason: &str| TokenizerError::BadVocabFile {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            _ => return Err(bad(1, "missing header")),
        }
        let mut byte_fallback = true;
        let mut pieces = Vec::new();
        for (n, line) in lines {
            if let Some(rest) = line.strip_prefix('#') {
                let mut fields = rest.split('\t');
                match fields.next() {
                    Some("special") => {
                        let names: Vec<&str> = fields.collect();
                        if names != SPECIAL_NAMES {
                            return Err(bad(n, "unexpected special tokens"));
                        }
                    }
                    Some("byte_fallback") => {
                        byte_fallback = fields
                            .next()
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| bad(n, "byte_fallback must be true or false"))?;
                    }
                    _ => return Err(bad(n, "unknown directive")),
                }
                continue;
            }
            let (piece, score) = line.rsplit_once('\t').ok_or_else(|| bad(n, "expected piece<TAB>logprob"))?;
            let score: f64 = score.parse().map_err(|_| bad(n, "logprob is not a number"))?;
            pieces.push((unescape(piece, n)?, score));
        }
        UnigramVocab::from_pieces(pieces, byte_fallback)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TokenizerError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn awkward_pieces_survive() {
        let v = UnigramVocab::from_pieces(
            vec![
                ("#a".into(), -0.1),
                ("a#".into(), -0.2),
                ("\\".into(), -1.0 / 3.0),
                ("\t".into(), -7.25e-300),
                (" ".into(), -2.0),
            ],
            false,
        )
        .unwrap();
        let back = UnigramVocab::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert!(!back.byte_fallback());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.tsv");
        let v = UnigramVocab::from_pieces(vec![("tʃ".into(), -0.7), ("a".into(), -1.1)], true).unwrap();
        v.save(&path).unwrap();
        assert_eq!(UnigramVocab::load(&path).unwrap(), v);
    }

    #[test]
    fn rejects_malformed_files() {
        assert!(UnigramVocab::from_text("a\t-1\n").is_err());
        let err = UnigramVocab::from_text(&format!("{MAGIC}\na\tx\n")).unwrap_err();
        assert!(matches!(err, TokenizerError::BadVocabFile { line: 2, .. }));
        assert!(UnigramVocab::from_text(&format!("{MAGIC}\na\n")).is_err());
    }

    proptest! {
        #[test]
        fn scores_reload_bit_exact(lp in -1e6f64..0.0, piece in "[^\r]{1,6}") {
            let v = UnigramVocab::from_pieces(vec![(piece, lp)], true).unwrap();
            let back = UnigramVocab::from_text(&v.to_text()).unwrap();
            prop_assert_eq!(back.pieces()[0].1.to_bits(), lp.to_bits());
            prop_assert_eq!(back, v);
        }
    }
}
