//! Loading of the bundled tab-separated character tables.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::IpaError;

const WHITELIST_TSV: &str = include_str!("../../data/ipa_whitelist.tsv");
const XSAMPA_TSV: &str = include_str!("../../data/xsampa.tsv");

/// How a whitelisted character behaves during segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CharClass {
    Base,
    Mark,
    Modifier,
    Supra,
    Tie,
    Space,
}

impl CharClass {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "base" => CharClass::Base,
            "mark" => CharClass::Mark,
            "modifier" => CharClass::Modifier,
            "supra" => CharClass::Supra,
            "tie" => CharClass::Tie,
            "space" => CharClass::Space,
            _ => return None,
        })
    }

    /// Marks, modifiers and tie bars need a preceding base.
    pub fn attaches(self) -> bool {
        matches!(self, CharClass::Mark | CharClass::Modifier)
    }
}

/// Decodes a table field: either literal text or a run of `U+XXXX` escapes.
fn decode_field(field: &str) -> Option<String> {
    if !field.starts_with("U+") {
        return Some(field.to_string());
    }
    field
        .split_whitespace()
        .map(|tok| {
            tok.strip_prefix("U+")
                .and_then(|hex| u32::from_str_radix(hex, 16).ok())
                .and_then(char::from_u32)
        })
        .collect()
}

/// Parses `<source>\t<target>` lines, skipping blanks and `#` comments.
pub fn parse_pairs(name: &str, text: &str) -> Result<Vec<(String, String)>, IpaError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || IpaError::BadTable {
            table: name.to_string(),
            line: idx + 1,
        };
        let (src, tgt) = line.split_once('\t').ok_or_else(bad)?;
        let src = decode_field(src).ok_or_else(bad)?;
        let tgt = decode_field(tgt).ok_or_else(bad)?;
        if src.is_empty() {
            return Err(bad());
        }
        out.push((src, tgt));
    }
    Ok(out)
}

/// Character whitelist keyed by code point.
pub fn whitelist() -> &'static HashMap<char, CharClass> {
    static TABLE: OnceLock<HashMap<char, CharClass>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let pairs = parse_pairs("ipa_whitelist", WHITELIST_TSV).expect("bundled whitelist parses");
        pairs
            .into_iter()
            .map(|(src, class)| {
                let mut chars = src.chars();
                let c = chars.next().expect("non-empty source");
                assert!(chars.next().is_none(), "whitelist entry {src:?} is not one character");
                let class = CharClass::parse(&class)
                    .unwrap_or_else(|| panic!("unknown whitelist class {class:?}"));
                (c, class)
            })
            .collect()
    })
}

pub fn class_of(c: char) -> Option<CharClass> {
    whitelist().get(&c).copied()
}

/// X-SAMPA to IPA pairs in file order.
pub fn xsampa_pairs() -> &'static [(String, String)] {
    static TABLE: OnceLock<Vec<(String, String)>> = OnceLock::new();
    TABLE.get_or_init(|| parse_pairs("xsampa", XSAMPA_TSV).expect("bundled X-SAMPA table parses"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_decode() {
        assert_eq!(decode_field("U+0361").as_deref(), Some("\u{361}"));
        assert_eq!(decode_field("U+0061 U+0301").as_deref(), Some("a\u{301}"));
        assert_eq!(decode_field("ʃ").as_deref(), Some("ʃ"));
        assert_eq!(decode_field("U+ZZZZ"), None);
    }

    #[test]
    fn bundled_tables_load() {
        assert_eq!(class_of('a'), Some(CharClass::Base));
        assert_eq!(class_of('\u{301}'), Some(CharClass::Mark));
        assert_eq!(class_of('ʰ'), Some(CharClass::Modifier));
        assert_eq!(class_of('ˈ'), Some(CharClass::Supra));
        assert_eq!(class_of('\u{361}'), Some(CharClass::Tie));
        assert_eq!(class_of(' '), Some(CharClass::Space));
        assert_eq!(class_of('!'), None);
        assert!(xsampa_pairs().len() > 150);
    }

    #[test]
    fn malformed_line_reports_position() {
        let err = parse_pairs("t", "# c\na\tb\nbroken\n").unwrap_err();
        assert!(matches!(err, IpaError::BadTable { line: 3, .. }));
    }
}
