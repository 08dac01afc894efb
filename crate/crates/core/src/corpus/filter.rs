use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ipa::normalize_ipa;

use super::ManifestRecord;

/// Drops words with fewer than `min_freq` records and keeps a uniform random
/// `cap` of the more frequent ones. Words are identified by their normalized
/// transcription (raw text when it does not normalize). Retained records keep
/// their input order.
pub fn filter_manifest(records: &[ManifestRecord], min_freq: usize, cap: usize, seed: u64) -> Vec<ManifestRecord> {
    let mut groups: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let key = normalize_ipa(&r.ipa).map(|s| s.text()).unwrap_or_else(|_| r.ipa.clone());
        groups.entry((r.lang.to_string(), key)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; records.len()];
    for members in groups.values() {
        if members.len() < min_freq {
            continue;
        }
        if members.len() <= cap {
            members.iter().for_each(|&i| keep[i] = true);
        } else {
            for k in sample(&mut rng, members.len(), cap) {
                keep[members[k]] = true;
            }
        }
    }
    records
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(r, _)| r.clone())
        .collect()
}
