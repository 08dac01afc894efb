//! X-SAMPA ↔ IPA conversion by greedy longest match over the bundled table.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::table::xsampa_pairs;
use super::IpaError;

struct Trie {
    longest: usize,
    forward: HashMap<&'static str, &'static str>,
}

fn forward() -> &'static Trie {
    static TRIE: OnceLock<Trie> = OnceLock::new();
    TRIE.get_or_init(|| {
        let mut forward = HashMap::new();
        let mut longest = 0;
        for (src, tgt) in xsampa_pairs() {
            longest = longest.max(src.len());
            forward.entry(src.as_str()).or_insert(tgt.as_str());
        }
        Trie { longest, forward }
    })
}

fn inverse() -> &'static (usize, HashMap<&'static str, &'static str>) {
    static INV: OnceLock<(usize, HashMap<&'static str, &'static str>)> = OnceLock::new();
    INV.get_or_init(|| {
        let mut map = HashMap::new();
        let mut longest = 0;
        for (src, tgt) in xsampa_pairs() {
            if tgt.is_empty() {
                continue;
            }
            longest = longest.max(tgt.len());
            map.entry(tgt.as_str()).or_insert(src.as_str());
        }
        (longest, map)
    })
}

/// Converts X-SAMPA to IPA, reading left to right and always taking the
/// longest table entry that matches.
pub fn xsampa_to_ipa(xsampa: &str) -> Result<String, IpaError> {
    let trie = forward();
    greedy(xsampa, trie.longest, &trie.forward)
}

/// Inverse conversion; shared IPA targets map back to the first X-SAMPA spelling in the table.
pub fn ipa_to_xsampa(ipa: &str) -> Result<String, IpaError> {
    let (longest, map) = inverse();
    greedy(ipa, *longest, map)
}

fn greedy(input: &str, longest: usize, map: &HashMap<&str, &str>) -> Result<String, IpaError> {
    let mut out = String::with_capacity(input.len() * 2);
    let mut pos = 0;
    while pos < input.len() {
        let rest = &input[pos..];
        let mut matched = None;
        let mut len = longest.min(rest.len());
        while len > 0 {
            if rest.is_char_boundary(len) {
                if let Some(tgt) = map.get(&rest[..len]) {
                    matched = Some((len, *tgt));
                    break;
                }
            }
            len -= 1;
        }
        let (len, tgt) = matched.ok_or(IpaError::UnknownXsampaToken { offset: pos })?;
        out.push_str(tgt);
        pos += len;
    }
    Ok(out)
}
