//! EM training of a unigram vocabulary with likelihood-loss pruning.

use std::collections::{BTreeMap, HashMap};

use super::{TokenizerError, UnigramVocab, PIECE_OFFSET};

#[derive(Debug, Clone)]
pub struct TrainerConfig {
    /// Total ids, including the five specials and the 256 byte tokens.
    pub target_vocab: usize,
    /// Seed candidates are capped at this multiple of `target_vocab`.
    pub seed_multiplier: usize,
    /// Share of prunable pieces removed per pruning round.
    pub prune_fraction: f64,
    pub max_piece_chars: usize,
    pub em_iterations: usize,
    pub byte_fallback: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            target_vocab: 500,
            seed_multiplier: 4,
            prune_fraction: 0.2,
            max_piece_chars: 8,
            em_iterations: 2,
            byte_fallback: true,
        }
    }
}

/// Corpus log-likelihood after each EM step, one list per pruning round.
/// Each list starts with the likelihood before the first M-step.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub seed_pieces: usize,
    pub rounds: Vec<Vec<f64>>,
}

impl TrainReport {
    /// True when no EM step lowered the likelihood beyond rounding.
    pub fn em_is_monotone(&self) -> bool {
        self.rounds.iter().all(|lls| {
            lls.windows(2)
                .all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0))
        })
    }
}

struct Model {
    pieces: Vec<String>,
    logp: Vec<f64>,
    index: HashMap<String, usize>,
    max_chars: usize,
}

impl Model {
    fn new(pieces: Vec<String>, weights: Vec<f64>, max_chars: usize) -> Self {
        let total: f64 = weights.iter().sum();
        let logp = weights.iter().map(|w| (w / total).ln()).collect();
        let index = pieces.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        Model {
            pieces,
            logp,
            index,
            max_chars,
        }
    }

    /// (start, end, piece) for every piece occurrence in `chars`.
    fn edges(&self, text: &str, offsets: &[usize]) -> Vec<(usize, usize, usize)> {
        let n = offsets.len() - 1;
        let mut edges = Vec::new();
        for start in 0..n {
            for end in start + 1..=(start + self.max_chars).min(n) {
                if let Some(&p) = self.index.get(&text[offsets[start]..offsets[end]]) {
                    if self.logp[p].is_finite() {
                        edges.push((start, end, p));
                    }
                }
            }
        }
        edges
    }

    /// E-step: corpus log-likelihood and expected piece counts.
    fn expectations(&self, corpus: &[Sentence]) -> (f64, Vec<f64>) {
        let mut counts = vec![0.0; self.pieces.len()];
        let mut ll = 0.0;
        for s in corpus {
            let n = s.offsets.len() - 1;
            let edges = self.edges(&s.text, &s.offsets);
            let mut alpha = vec![f64::NEG_INFINITY; n + 1];
            alpha[0] = 0.0;
            // Edges are sorted by start, so a pass in end order needs a re-sort.
            let mut by_end = edges.clone();
            by_end.sort_by_key(|&(_, end, _)| end);
            for &(start, end, p) in &by_end {
                alpha[end] = log_add(alpha[end], alpha[start] + self.logp[p]);
            }
            let mut beta = vec![f64::NEG_INFINITY; n + 1];
            beta[n] = 0.0;
            for &(start, end, p) in edges.iter().rev() {
                beta[start] = log_add(beta[start], beta[end] + self.logp[p]);
            }
            let z = alpha[n];
            if !z.is_finite() {
                continue;
            }
            ll += s.count * z;
            for &(start, end, p) in &edges {
                let post = (alpha[start] + self.logp[p] + beta[end] - z).exp();
                counts[p] += s.count * post;
            }
        }
        (ll, counts)
    }

    fn maximize(&mut self, counts: &[f64]) {
        let total: f64 = counts.iter().sum();
        for (lp, &c) in self.logp.iter_mut().zip(counts) {
            *lp = if c > 0.0 { (c / total).ln() } else { f64::NEG_INFINITY };
        }
    }

    /// Best segmentation of `text` as piece indices, optionally without one piece.
    fn viterbi(&self, text: &str, skip: Option<usize>) -> Vec<usize> {
        let offsets = char_offsets(text);
        let n = offsets.len() - 1;
        let mut best: Vec<(f64, usize, usize)> = vec![(f64::NEG_INFINITY, 0, usize::MAX); n + 1];
        best[0].0 = 0.0;
        for (start, end, p) in self.edges(text, &offsets) {
            if Some(p) == skip || !best[start].0.is_finite() {
                continue;
            }
            let score = best[start].0 + self.logp[p];
            if score > best[end].0 {
                best[end] = (score, start, p);
            }
        }
        let mut out = Vec::new();
        let mut end = n;
        while end > 0 {
            let (_, start, p) = best[end];
            if p == usize::MAX {
                return Vec::new();
            }
            out.push(p);
            end = start;
        }
        out.reverse();
        out
    }

    fn remove(&mut self, doomed: &[usize]) {
        let mut keep = vec![true; self.pieces.len()];
        for &d in doomed {
            keep[d] = false;
        }
        let (pieces, logp): (Vec<String>, Vec<f64>) = self
            .pieces
            .drain(..)
            .zip(self.logp.drain(..))
            .zip(keep)
            .filter_map(|(pl, k)| k.then_some(pl))
            .unzip();
        // Zero-probability pieces stay at -inf after renormalizing.
        let weights: Vec<f64> = logp.iter().map(|lp| lp.exp()).collect();
        *self = Model::new(pieces, weights, self.max_chars);
    }
}

struct Sentence {
    text: String,
    offsets: Vec<usize>,
    count: f64,
}

fn char_offsets(text: &str) -> Vec<usize> {
    text.char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()))
        .collect()
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Trains a unigram vocabulary on normalized transcriptions.
///
/// Seeds every substring of up to `max_piece_chars` characters that occurs at
/// least twice (multi-character pieces never span a word boundary), plus every
/// single character. Each round runs `em_iterations` EM steps and then drops
/// the `prune_fraction` of multi-character pieces whose removal costs the
/// least likelihood, until the budget is met. Single characters are never
/// pruned.
pub fn train_unigram(
    corpus: &[String],
    cfg: &TrainerConfig,
) -> Result<(UnigramVocab, TrainReport), TokenizerError> {
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(TokenizerError::CorpusEmpty);
    }
    let mut counts: BTreeMap<&str, f64> = BTreeMap::new();
    for s in corpus.iter().filter(|s| !s.is_empty()) {
        *counts.entry(s.as_str()).or_default() += 1.0;
    }
    let sentences: Vec<Sentence> = counts
        .into_iter()
        .map(|(text, count)| Sentence {
            text: text.to_string(),
            offsets: char_offsets(text),
            count,
        })
        .collect();

    // Substring frequencies.
    let mut freq: HashMap<&str, f64> = HashMap::new();
    for s in &sentences {
        let n = s.offsets.len() - 1;
        for start in 0..n {
            for end in start + 1..=(start + cfg.max_piece_chars).min(n) {
                let sub = &s.text[s.offsets[start]..s.offsets[end]];
                if end - start > 1 && sub.contains(' ') {
                    break;
                }
                *freq.entry(sub).or_default() += s.count;
            }
        }
    }
    let mut singles: Vec<(&str, f64)> = freq
        .iter()
        .filter(|(p, _)| p.chars().count() == 1)
        .map(|(p, f)| (*p, *f))
        .collect();
    singles.sort_by(|a, b| a.0.cmp(b.0));
    let budget = cfg.target_vocab.saturating_sub(PIECE_OFFSET as usize);
    if singles.len() > budget {
        return Err(TokenizerError::TargetVocabTooSmall {
            target: cfg.target_vocab,
            needed: singles.len() + PIECE_OFFSET as usize,
        });
    }
    let mut multis: Vec<(&str, f64)> = freq
        .iter()
        .filter(|(p, f)| p.chars().count() > 1 && **f >= 2.0)
        .map(|(p, f)| (*p, *f))
        .collect();
    multis.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    multis.truncate(cfg.seed_multiplier.saturating_mul(cfg.target_vocab));

    let (pieces, weights): (Vec<String>, Vec<f64>) = singles
        .iter()
        .chain(&multis)
        .map(|(p, f)| (p.to_string(), *f))
        .unzip();
    let mut report = TrainReport {
        seed_pieces: pieces.len(),
        rounds: Vec::new(),
    };
    let mut model = Model::new(pieces, weights, cfg.max_piece_chars);

    loop {
        let mut lls = Vec::with_capacity(cfg.em_iterations + 1);
        for _ in 0..cfg.em_iterations {
            let (ll, expected) = model.expectations(&sentences);
            lls.push(ll);
            model.maximize(&expected);
        }
        lls.push(model.expectations(&sentences).0);
        debug_assert!(
            lls.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0)),
            "EM lowered the corpus likelihood: {lls:?}"
        );
        report.rounds.push(lls);
        if model.pieces.len() <= budget {
            break;
        }
        let doomed = prune_candidates(&model, &sentences, cfg, budget);
        if doomed.is_empty() {
            break;
        }
        model.remove(&doomed);
    }
    Ok((finalize(model, cfg.byte_fallback)?, report))
}

/// Multi-character pieces to drop this round, cheapest first.
fn prune_candidates(
    model: &Model,
    sentences: &[Sentence],
    cfg: &TrainerConfig,
    budget: usize,
) -> Vec<usize> {
    let mut vfreq = vec![0.0; model.pieces.len()];
    for s in sentences {
        for p in model.viterbi(&s.text, None) {
            vfreq[p] += s.count;
        }
    }
    let sum: f64 = vfreq.iter().sum();
    let mut losses: Vec<(f64, usize)> = Vec::new();
    for (p, piece) in model.pieces.iter().enumerate() {
        if piece.chars().count() == 1 {
            continue;
        }
        let loss = if vfreq[p] == 0.0 {
            0.0
        } else {
            let alts = model.viterbi(piece, Some(p));
            let f = vfreq[p];
            let logprob_piece = f.ln() - sum.ln();
            let new_sum = sum + f * (alts.len() as f64 - 1.0);
            let logprob_alt: f64 = alts
                .iter()
                .map(|&a| (vfreq[a] + f).ln() - new_sum.ln())
                .sum();
            f * (logprob_piece - logprob_alt)
        };
        losses.push((loss, p));
    }
    losses.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| model.pieces[a.1].cmp(&model.pieces[b.1]))
    });
    let by_fraction = (losses.len() as f64 * cfg.prune_fraction).ceil() as usize;
    let over = model.pieces.len() - budget;
    losses.iter().take(by_fraction.max(1).min(over)).map(|&(_, p)| p).collect()
}

fn finalize(model: Model, byte_fallback: bool) -> Result<UnigramVocab, TokenizerError> {
    let min_finite = model
        .logp
        .iter()
        .copied()
        .filter(|lp| lp.is_finite())
        .fold(0.0, f64::min);
    let mut pieces: Vec<(String, f64)> = model
        .pieces
        .into_iter()
        .zip(model.logp)
        .map(|(p, lp)| (p, if lp.is_finite() { lp.min(0.0) } else { min_finite - 1.0 }))
        .collect();
    pieces.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    UnigramVocab::from_pieces(pieces, byte_fallback)
}
