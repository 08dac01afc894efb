//! Immutable stores of unit-normalized embeddings with exact cosine top-k search.

use std::collections::HashSet;
use std::path::Path;

use thiserror::Error;

use crate::binio::{put_f32s, put_u32, write_atomic, Reader, Truncated, MAGIC};
use crate::encoders::{Embedding, Modality};

pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("modality mismatch: store holds {expected}, got {got}")]
    ModalityMismatch { expected: &'static str, got: &'static str },
    #[error("a store needs at least one embedding")]
    Empty,
    #[error("embedding {0:?} has zero norm")]
    ZeroNorm(String),
    #[error("not an embedding store")]
    BadMagic,
    #[error("unsupported store version {0}")]
    VersionUnsupported(u32),
    #[error("store file is truncated")]
    TruncatedFile,
    #[error("malformed store: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<Truncated> for RetrievalError {
    fn from(_: Truncated) -> Self {
        RetrievalError::TruncatedFile
    }
}

pub type Result<T> = std::result::Result<T, RetrievalError>;

/// N unit-length rows of dimension d, with one unique id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    modality: Modality,
    dim: usize,
    ids: Vec<String>,
    matrix: Vec<f32>,
}

/// Ranked candidates for one query, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query: String,
    pub hits: Vec<(String, f64)>,
}

fn unit(id: &str, v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(RetrievalError::ZeroNorm(id.to_string()));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Normalizes every row and keeps insertion order.
pub fn build_store(embeddings: &[Embedding]) -> Result<EmbeddingStore> {
    let first = embeddings.first().ok_or(RetrievalError::Empty)?;
    let (dim, modality) = (first.vector.len(), first.modality);
    let mut seen = HashSet::new();
    let mut matrix = Vec::with_capacity(dim * embeddings.len());
    for e in embeddings {
        if e.vector.len() != dim {
            return Err(RetrievalError::DimMismatch {
                expected: dim,
                got: e.vector.len(),
            });
        }
        if e.modality != modality {
            return Err(RetrievalError::ModalityMismatch {
                expected: modality.as_str(),
                got: e.modality.as_str(),
            });
        }
        if !seen.insert(e.id.as_str()) {
            return Err(RetrievalError::DuplicateId(e.id.clone()));
        }
        matrix.extend(unit(&e.id, &e.vector)?.into_iter().map(|x| x as f32));
    }
    Ok(EmbeddingStore {
        modality,
        dim,
        ids: embeddings.iter().map(|e| e.id.clone()).collect(),
        matrix,
    })
}

impl EmbeddingStore {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    /// Cosine of `query` against every row, in row order.
    pub fn similarities(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.dim {
            return Err(RetrievalError::DimMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let q = unit("query", query)?;
        Ok(self
            .matrix
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(&q).map(|(&a, b)| f64::from(a) * b).sum::<f64>().clamp(-1.0, 1.0))
            .collect())
    }
}

/// Exact top-`k` rows by cosine similarity, ties broken by ascending id.
/// `k` is capped at the store size.
pub fn search(store: &EmbeddingStore, query: &Embedding, k: usize) -> Result<RetrievalResult> {
    search_excluding(store, query, k, None)
}

/// As [`search`], leaving out the row whose id is `exclude`.
pub fn search_excluding(
    store: &EmbeddingStore,
    query: &Embedding,
    k: usize,
    exclude: Option<&str>,
) -> Result<RetrievalResult> {
    let sims = store.similarities(&query.vector)?;
    let mut order: Vec<usize> = (0..store.len())
        .filter(|&i| Some(store.ids[i].as_str()) != exclude)
        .collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then_with(|| store.ids[a].cmp(&store.ids[b])));
    order.truncate(k);
    Ok(RetrievalResult {
        query: query.id.clone(),
        hits: order.into_iter().map(|i| (store.ids[i].clone(), sims[i])).collect(),
    })
}

fn modality_byte(m: Modality) -> u8 {
    match m {
        Modality::Speech => 0,
        Modality::Phoneme => 1,
    }
}

/// Serialized store: magic, version, modality byte, dim, count,
/// length-prefixed UTF-8 ids, then little-endian f32 rows.
pub fn store_bytes(store: &EmbeddingStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(17 + store.matrix.len() * 4);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, STORE_VERSION);
    out.push(modality_byte(store.modality));
    put_u32(&mut out, store.dim as u32);
    put_u32(&mut out, store.len() as u32);
    for id in &store.ids {
        put_u32(&mut out, id.len() as u32);
        out.extend_from_slice(id.as_bytes());
    }
    put_f32s(&mut out, store.matrix.iter().copied());
    out
}

pub fn parse_store(bytes: &[u8]) -> Result<EmbeddingStore> {
    let mut r = Reader::new(bytes);
    if r.bytes(4).map_err(|_| RetrievalError::BadMagic)? != MAGIC {
        return Err(RetrievalError::BadMagic);
    }
    let version = r.u32()?;
    if version != STORE_VERSION {
        return Err(RetrievalError::VersionUnsupported(version));
    }
    let modality = match r.u8()? {
        0 => Modality::Speech,
        1 => Modality::Phoneme,
        b => return Err(RetrievalError::Malformed(format!("unknown modality byte {b}"))),
    };
    let dim = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut ids = Vec::with_capacity(count.min(1 << 20));
    let mut seen = HashSet::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let id = std::str::from_utf8(r.bytes(len)?)
            .map_err(|_| RetrievalError::Malformed("id is not UTF-8".into()))?
            .to_string();
        if !seen.insert(id.clone()) {
            return Err(RetrievalError::DuplicateId(id));
        }
        ids.push(id);
    }
    let n = dim.checked_mul(count).ok_or(RetrievalError::TruncatedFile)?;
    let matrix = r.f32s(n)?;
    if !r.is_at_end() {
        return Err(RetrievalError::Malformed("trailing bytes".into()));
    }
    if count == 0 {
        return Err(RetrievalError::Empty);
    }
    Ok(EmbeddingStore {
        modality,
        dim,
        ids,
        matrix,
    })
}

pub fn save_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    Ok(write_atomic(path.as_ref(), &store_bytes(store))?)
}

pub fn load_store(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    parse_store(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(id: &str, v: Vec<f64>) -> Embedding {
        Embedding {
            id: id.into(),
            modality: Modality::Speech,
            vector: v,
        }
    }

    #[test]
    fn build_examples() {
        let s = build_store(&[emb("a", vec![3.0, 4.0])]).unwrap();
        assert_eq!(s.len(), 1);
        let norm: f64 = s.row(0).iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!(matches!(
            build_store(&[emb("a", vec![1.0; 64]), emb("b", vec![1.0; 32])]),
            Err(RetrievalError::DimMismatch { expected: 64, got: 32 })
        ));
        assert!(matches!(
            build_store(&[emb("a", vec![1.0]), emb("a", vec![2.0])]),
            Err(RetrievalError::DuplicateId(_))
        ));
        assert!(matches!(build_store(&[emb("z", vec![0.0, 0.0])]), Err(RetrievalError::ZeroNorm(_))));
        assert!(matches!(build_store(&[]), Err(RetrievalError::Empty)));
    }

    #[test]
    fn search_examples() {
        // Unit vectors at chosen cosines against the query (1, 0).
        let at = |c: f64| vec![c, (1.0 - c * c).sqrt()];
        let s = build_store(&[emb("x", at(0.9)), emb("y", at(0.1)), emb("z", at(0.5))]).unwrap();
        let r = search(&s, &emb("q", vec![1.0, 0.0]), 10).unwrap();
        let ids: Vec<&str> = r.hits.iter().map(|h| h.0.as_str()).collect();
        assert_eq!(ids, ["x", "z", "y"]);
        assert!((r.hits[0].1 - 0.9).abs() < 1e-6);
        let r = search(&s, &emb("q", at(0.5)), 1).unwrap();
        assert_eq!(r.hits[0].0, "z");
        assert!((r.hits[0].1 - 1.0).abs() < 1e-6);
        assert!(matches!(search(&s, &emb("q", vec![1.0]), 1), Err(RetrievalError::DimMismatch { .. })));
        let r = search_excluding(&s, &emb("q", vec![1.0, 0.0]), 10, Some("x")).unwrap();
        assert_eq!(r.hits.len(), 2);
    }

    #[test]
    fn ties_break_by_id() {
        let s = build_store(&[emb("b", vec![1.0, 0.0]), emb("a", vec![2.0, 0.0]), emb("c", vec![0.0, 1.0])]).unwrap();
        let r = search(&s, &emb("q", vec![1.0, 0.0]), 3).unwrap();
        assert_eq!(r.hits.iter().map(|h| h.0.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
    }

    #[test]
    fn file_round_trip_and_errors() {
        let s = build_store(&[emb("α", vec![0.1, -0.7, 0.2]), emb("b", vec![1.0, 2.0, 3.0])]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        save_store(&s, &p).unwrap();
        let back = load_store(&p).unwrap();
        assert_eq!(back, s);
        assert_eq!(store_bytes(&back), store_bytes(&s));

        let mut bad = store_bytes(&s);
        bad[0] = b'X';
        assert!(matches!(parse_store(&bad), Err(RetrievalError::BadMagic)));
        let mut v2 = store_bytes(&s);
        v2[4] = 2;
        assert!(matches!(parse_store(&v2), Err(RetrievalError::VersionUnsupported(2))));
        let mut more = store_bytes(&s);
        more[13] = 3; // count 2 -> 3
        assert!(matches!(parse_store(&more), Err(RetrievalError::TruncatedFile)));
        let full = store_bytes(&s);
        assert!(matches!(parse_store(&full[..full.len() - 1]), Err(RetrievalError::TruncatedFile)));
    }

    fn store_and_query() -> impl Strategy<Value = (usize, Vec<Vec<f64>>, Vec<f64>)> {
        (1usize..=16, 1usize..=60).prop_flat_map(|(d, n)| {
            (
                Just(d),
                proptest::collection::vec(
                    proptest::collection::vec(prop_oneof![Just(0.5), Just(-1.0), -2.0f64..2.0], d)
                        .prop_filter("non-zero", |v| v.iter().any(|&x| x != 0.0)),
                    n,
                ),
                proptest::collection::vec(-2.0f64..2.0, d).prop_filter("non-zero", |v| v.iter().any(|&x| x != 0.0)),
            )
        })
    }

    proptest! {
        #[test]
        fn search_equals_brute_force((_d, rows, q) in store_and_query()) {
            let embs: Vec<Embedding> = rows.iter().enumerate().map(|(i, v)| emb(&format!("r{i:03}"), v.clone())).collect();
            let s = build_store(&embs).unwrap();
            let r = search(&s, &emb("q", q.clone()), rows.len()).unwrap();
            // Oracle: score each stored f32 row directly, then sort.
            let qn: f64 = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            let mut want: Vec<(String, f64)> = (0..rows.len())
                .map(|i| {
                    let dot: f64 = s.row(i).iter().zip(&q).map(|(&a, b)| f64::from(a) * b / qn).sum();
                    (format!("r{i:03}"), dot.clamp(-1.0, 1.0))
                })
                .collect();
            want.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            prop_assert_eq!(r.hits.iter().map(|h| &h.0).collect::<Vec<_>>(), want.iter().map(|h| &h.0).collect::<Vec<_>>());
            for (h, w) in r.hits.iter().zip(&want) {
                prop_assert!((h.1 - w.1).abs() < 1e-12);
            }
            prop_assert_eq!(&r, &search(&s, &emb("q", q), rows.len()).unwrap());
        }
    }
}
