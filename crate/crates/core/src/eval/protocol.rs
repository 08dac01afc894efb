use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::MelSpectrogram;
use crate::encoders::{DualEncoderModel, Embedding, Modality};
use crate::ipa::PhonemeSequence;
use crate::retrieval::{build_store, search_excluding, RetrievalResult};
use crate::tokenizer::UnigramVocab;
use crate::training::tokenize_phonemes;

use super::metrics::{auc, eer, hit_at_k, mean_average_precision, RelevanceJudgment, ScoredPairSet};
use super::{EvalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    PhonemeToSpeech,
    SpeechToPhoneme,
    SpeechToSpeech,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::PhonemeToSpeech, Direction::SpeechToPhoneme, Direction::SpeechToSpeech];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::PhonemeToSpeech => "p2s",
            Direction::SpeechToPhoneme => "s2p",
            Direction::SpeechToSpeech => "s2s",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Direction::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown direction {s:?} (expected p2s, s2p or s2s)"))
    }
}

/// One evaluation clip: its speech embedding and the embedding of its
/// transcription. `key` is the normalized transcription that defines
/// relevance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub lang: String,
    pub key: String,
    pub speech: Vec<f64>,
    pub phoneme: Vec<f64>,
}

/// One line of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub direction: String,
    pub lang: String,
    pub hit1: Option<f64>,
    pub map: Option<f64>,
    pub eer: Option<f64>,
    pub auc: Option<f64>,
    pub n: usize,
}

/// Encodes every clip and transcription; transcriptions shared by several
/// clips are encoded once.
pub fn embed_items(
    model: &DualEncoderModel,
    vocab: &UnigramVocab,
    inputs: &[(String, PhonemeSequence, MelSpectrogram)],
) -> Result<Vec<EvalItem>> {
    let mut cache: HashMap<String, Vec<f64>> = HashMap::new();
    let mut out = Vec::with_capacity(inputs.len());
    for (id, seq, mel) in inputs {
        let key = seq.text();
        let phoneme = match cache.get(&key) {
            Some(v) => v.clone(),
            None => {
                let v = model.encode_phonemes(&tokenize_phonemes(vocab, seq, model.cfg.max_positions))?;
                cache.insert(key.clone(), v.clone());
                v
            }
        };
        out.push(EvalItem {
            id: id.clone(),
            lang: seq.lang.to_string(),
            key,
            speech: model.encode_speech(mel)?,
            phoneme,
        });
    }
    Ok(out)
}

struct Query {
    emb: Embedding,
    lang: String,
    relevant: HashSet<String>,
    exclude: Option<String>,
}

fn speech_emb(it: &EvalItem) -> Embedding {
    Embedding {
        id: it.id.clone(),
        modality: Modality::Speech,
        vector: it.speech.clone(),
    }
}

/// Distinct transcriptions in first-seen order, with the first item of each.
fn unique_keys(items: &[EvalItem]) -> Vec<&EvalItem> {
    let mut seen = HashSet::new();
    items.iter().filter(|it| seen.insert(it.key.as_str())).collect()
}

/// Ranked results for every query in `direction`, with the query languages
/// and relevance judgments. Every candidate in the pool is ranked.
pub fn run_retrieval(
    items: &[EvalItem],
    direction: Direction,
) -> Result<(Vec<RetrievalResult>, Vec<String>, RelevanceJudgment)> {
    if items.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let mut ids = HashSet::new();
    if let Some(dup) = items.iter().find(|it| !ids.insert(it.id.as_str())) {
        return Err(EvalError::DuplicateItem(dup.id.clone()));
    }
    let by_key = |key: &str| -> HashSet<String> { items.iter().filter(|it| it.key == key).map(|it| it.id.clone()).collect() };
    let (candidates, queries): (Vec<Embedding>, Vec<Query>) = match direction {
        Direction::PhonemeToSpeech => (
            items.iter().map(speech_emb).collect(),
            unique_keys(items)
                .into_iter()
                .map(|it| Query {
                    emb: Embedding {
                        id: it.key.clone(),
                        modality: Modality::Phoneme,
                        vector: it.phoneme.clone(),
                    },
                    lang: it.lang.clone(),
                    relevant: by_key(&it.key),
                    exclude: None,
                })
                .collect(),
        ),
        Direction::SpeechToPhoneme => (
            unique_keys(items)
                .into_iter()
                .map(|it| Embedding {
                    id: it.key.clone(),
                    modality: Modality::Phoneme,
                    vector: it.phoneme.clone(),
                })
                .collect(),
            items
                .iter()
                .map(|it| Query {
                    emb: speech_emb(it),
                    lang: it.lang.clone(),
                    relevant: HashSet::from([it.key.clone()]),
                    exclude: None,
                })
                .collect(),
        ),
        Direction::SpeechToSpeech => {
            let mut qs = Vec::with_capacity(items.len());
            for it in items {
                let mut relevant = by_key(&it.key);
                relevant.remove(&it.id);
                if relevant.is_empty() {
                    return Err(EvalError::InsufficientPositives(it.id.clone()));
                }
                qs.push(Query {
                    emb: speech_emb(it),
                    lang: it.lang.clone(),
                    relevant,
                    exclude: Some(it.id.clone()),
                });
            }
            (items.iter().map(speech_emb).collect(), qs)
        }
    };
    let store = build_store(&candidates)?;
    let mut results = Vec::with_capacity(queries.len());
    let mut langs = Vec::with_capacity(queries.len());
    let mut rel = RelevanceJudgment::new();
    for q in queries {
        results.push(search_excluding(&store, &q.emb, store.len(), q.exclude.as_deref())?);
        langs.push(q.lang);
        rel.insert(q.emb.id, q.relevant);
    }
    Ok((results, langs, rel))
}

fn pair_scores(results: &[&RetrievalResult], rel: &RelevanceJudgment) -> ScoredPairSet {
    let mut pairs = ScoredPairSet::default();
    for r in results {
        let relevant = &rel[&r.query];
        for (id, s) in &r.hits {
            if relevant.contains(id) {
                pairs.positives.push(*s);
            } else {
                pairs.negatives.push(*s);
            }
        }
    }
    pairs
}

fn retrieval_row(direction: Direction, lang: &str, results: &[&RetrievalResult], rel: &RelevanceJudgment) -> Result<MetricRow> {
    let owned: Vec<RetrievalResult> = results.iter().map(|r| (*r).clone()).collect();
    let pairs = pair_scores(results, rel);
    Ok(MetricRow {
        direction: direction.as_str().into(),
        lang: lang.into(),
        hit1: Some(hit_at_k(&owned, rel, 1)?),
        map: Some(mean_average_precision(&owned, rel)?),
        eer: eer(&pairs).ok(),
        auc: auc(&pairs).ok(),
        n: results.len(),
    })
}

/// Hit@1 and mAP over the full pool (plus EER/AUC over every
/// query-candidate score), overall as `lang = "all"` and per query language.
/// Relevance is equality of normalized transcriptions; in speech-to-speech
/// the query clip is left out of its own pool.
pub fn evaluate_retrieval(items: &[EvalItem], direction: Direction) -> Result<Vec<MetricRow>> {
    let (results, langs, rel) = run_retrieval(items, direction)?;
    let all: Vec<&RetrievalResult> = results.iter().collect();
    let mut rows = vec![retrieval_row(direction, "all", &all, &rel)?];
    let mut per: BTreeMap<&str, Vec<&RetrievalResult>> = BTreeMap::new();
    for (r, l) in results.iter().zip(&langs) {
        per.entry(l.as_str()).or_default().push(r);
    }
    for (lang, rs) in per {
        rows.push(retrieval_row(direction, lang, &rs, &rel)?);
    }
    Ok(rows)
}

/// A scored trial: does `comparison` match `anchor`?
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionPair {
    pub direction: Direction,
    pub lang: String,
    pub anchor: Vec<f64>,
    pub comparison: Vec<f64>,
    pub label: bool,
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    let (na, nb) = (a.iter().map(|x| x * x).sum::<f64>().sqrt(), b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(EvalError::NonFiniteScore);
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// EER and AUC of cosine scores per direction, overall and per language.
pub fn evaluate_detection(pairs: &[DetectionPair]) -> Result<Vec<MetricRow>> {
    let mut groups: BTreeMap<(Direction, String), ScoredPairSet> = BTreeMap::new();
    for p in pairs {
        let s = cosine(&p.anchor, &p.comparison)?;
        for lang in ["all".to_string(), p.lang.clone()] {
            let set = groups.entry((p.direction, lang)).or_default();
            if p.label {
                set.positives.push(s);
            } else {
                set.negatives.push(s);
            }
        }
    }
    let mut rows = Vec::new();
    for ((d, lang), set) in &groups {
        // Per-language rows duplicate "all" when there is one language.
        if lang != "all" && groups.keys().filter(|(dd, _)| dd == d).count() == 2 {
            continue;
        }
        rows.push(MetricRow {
            direction: d.as_str().into(),
            lang: lang.clone(),
            hit1: None,
            map: None,
            eer: Some(eer(set)?),
            auc: Some(auc(set)?),
            n: set.positives.len() + set.negatives.len(),
        });
    }
    Ok(rows)
}

/// One JSON object per row, written atomically.
pub fn write_report(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r).map_err(std::io::Error::other)?;
        buf.push(b'\n');
    }
    Ok(crate::binio::write_atomic(path.as_ref(), &buf)?)
}

/// Fixed-width table of the rows, metrics as percentages.
pub fn format_table(rows: &[MetricRow]) -> String {
    let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x));
    let mut out = format!("{:<5} {:<8} {:>7} {:>7} {:>7} {:>7} {:>7}\n", "dir", "lang", "hit1", "map", "eer", "auc", "n");
    for r in rows {
        out.push_str(&format!(
            "{:<5} {:<8} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
            r.direction,
            r.lang,
            pct(r.hit1),
            pct(r.map),
            pct(r.eer),
            pct(r.auc),
            r.n
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, lang: &str, key: &str, speech: Vec<f64>, phoneme: Vec<f64>) -> EvalItem {
        EvalItem {
            id: id.into(),
            lang: lang.into(),
            key: key.into(),
            speech,
            phoneme,
        }
    }

    fn one_hot(k: usize) -> Vec<f64> {
        let mut v = vec![0.0; 4];
        v[k] = 1.0;
        v
    }

    fn oracle_items() -> Vec<EvalItem> {
        let keys = ["pa", "ta", "ka"];
        (0..9)
            .map(|i| {
                let k = i % 3;
                let lang = if k == 2 { "bbb" } else { "aaa" };
                item(&format!("c{i}"), lang, keys[k], one_hot(k), one_hot(k))
            })
            .collect()
    }

    #[test]
    fn oracle_embeddings_are_perfect() {
        for d in Direction::ALL {
            let rows = evaluate_retrieval(&oracle_items(), d).unwrap();
            assert_eq!(rows[0].lang, "all");
            assert_eq!((rows[0].hit1, rows[0].map), (Some(1.0), Some(1.0)), "{d:?}");
            assert_eq!((rows[0].eer, rows[0].auc), (Some(0.0), Some(1.0)));
            let per: usize = rows[1..].iter().map(|r| r.n).sum();
            assert_eq!(per, rows[0].n);
        }
        let p2s = evaluate_retrieval(&oracle_items(), Direction::PhonemeToSpeech).unwrap();
        assert_eq!(p2s[0].n, 3);
        assert_eq!(evaluate_retrieval(&oracle_items(), Direction::SpeechToSpeech).unwrap()[0].n, 9);
    }

    #[test]
    fn handcrafted_pool() {
        // Query "pa" against five clips at known angles.
        let at = |deg: f64| vec![deg.to_radians().cos(), deg.to_radians().sin()];
        let q = at(0.0);
        let items = vec![
            item("s1", "aaa", "pa", at(10.0), q.clone()),
            item("s2", "aaa", "ti", at(5.0), at(90.0)),
            item("s3", "aaa", "pa", at(40.0), q.clone()),
            item("s4", "aaa", "ku", at(20.0), at(180.0)),
            item("s5", "aaa", "ti", at(80.0), at(90.0)),
        ];
        let (results, _, rel) = run_retrieval(&items, Direction::PhonemeToSpeech).unwrap();
        let pa = results.iter().find(|r| r.query == "pa").unwrap();
        let order: Vec<&str> = pa.hits.iter().map(|h| h.0.as_str()).collect();
        assert_eq!(order, ["s2", "s1", "s4", "s3", "s5"]);
        // Relevant at ranks 2 and 4: AP = (1/2 + 2/4) / 2.
        assert!((super::super::metrics::average_precision(pa, &rel["pa"]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn self_match_needs_a_second_clip() {
        let mut items = oracle_items();
        items.push(item("lonely", "aaa", "zu", one_hot(3), one_hot(3)));
        assert!(matches!(
            evaluate_retrieval(&items, Direction::SpeechToSpeech),
            Err(EvalError::InsufficientPositives(id)) if id == "lonely"
        ));
        assert!(evaluate_retrieval(&items, Direction::SpeechToPhoneme).is_ok());
    }

    #[test]
    fn detection_examples() {
        let pair = |a: Vec<f64>, b: Vec<f64>, label| DetectionPair {
            direction: Direction::PhonemeToSpeech,
            lang: "aaa".into(),
            anchor: a,
            comparison: b,
            label,
        };
        let rows = evaluate_detection(&[pair(one_hot(0), one_hot(0), true), pair(one_hot(0), one_hot(1), false)]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].eer, rows[0].auc), (Some(0.0), Some(1.0)));
        let rows = evaluate_detection(&[pair(one_hot(0), one_hot(1), true), pair(one_hot(0), one_hot(1), false)]).unwrap();
        assert_eq!((rows[0].eer, rows[0].auc), (Some(0.5), Some(0.5)));
    }

    #[test]
    fn report_lines_have_stable_fields() {
        let rows = evaluate_retrieval(&oracle_items(), Direction::PhonemeToSpeech).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        write_report(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with(r#"{"direction":"p2s","lang":"all","hit1":1.0,"map":1.0,"eer":0.0,"auc":1.0,"n":3}"#));
        assert!(format_table(&rows).contains("100.00"));
    }
}
