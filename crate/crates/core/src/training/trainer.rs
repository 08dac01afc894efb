use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{spec_augment, MelSpectrogram, SpecAugmentConfig};
use crate::encoders::DualEncoderModel;
use crate::ipa::PhonemeSequence;
use crate::negatives::{corrupt_sentence, minimal_pair, InventoryBook};
use crate::numerics::{clip_global_norm, AdamW, AdamWConfig, Graph, Var};
use crate::tokenizer::{TokenSequence, UnigramVocab, BOS, EOS};

use super::{cosine_similarity, lr_schedule, siglip_loss, PairLabels, Result, TrainConfig, TrainError};

/// Whether a source pairs clips with single words or whole utterances;
/// decides how hard negatives are made.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceLevel {
    Word,
    Utterance,
}

#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    pub mel: MelSpectrogram,
    pub phonemes: PhonemeSequence,
}

#[derive(Debug, Clone)]
pub struct TrainSource {
    pub name: String,
    pub level: SourceLevel,
    pub items: Vec<TrainItem>,
}

impl TrainSource {
    /// The per-source override if configured, else the level default.
    pub fn batch_size(&self, cfg: &TrainConfig) -> usize {
        cfg.source_batch_sizes
            .get(&self.name.to_ascii_lowercase())
            .copied()
            .unwrap_or(match self.level {
                SourceLevel::Word => cfg.word_batch_size,
                SourceLevel::Utterance => cfg.utterance_batch_size,
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub source: usize,
    pub batch_size: usize,
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub lr: f64,
}

pub const METRICS_HEADER: &str = "step\tsource\tbatch_size\tloss\tgrad_norm\tlr";

impl StepMetrics {
    pub fn tsv_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.step, self.source, self.batch_size, self.loss, self.grad_norm, self.lr
        )
    }
}

/// `BOS`, the tokenized transcription, `EOS`, cut to `max_len`.
pub fn tokenize_phonemes(vocab: &UnigramVocab, seq: &PhonemeSequence, max_len: usize) -> TokenSequence {
    let mut ids = vec![BOS];
    ids.extend(vocab.encode(&seq.text()).ids);
    ids.push(EOS);
    TokenSequence::new(ids).truncated(max_len)
}

/// Sigmoid pair loss for one batch: speech rows against the paired phoneme
/// sequences followed by the hard negatives.
pub fn batch_loss(
    model: &DualEncoderModel,
    g: &mut Graph,
    mels: &[MelSpectrogram],
    positives: &[TokenSequence],
    negatives: &[TokenSequence],
) -> Result<Var> {
    if mels.is_empty() || mels.len() != positives.len() {
        return Err(TrainError::BadLabels(format!(
            "{} clips for {} transcriptions",
            mels.len(),
            positives.len()
        )));
    }
    let speech = mels
        .iter()
        .map(|m| model.speech_forward(g, m))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let phon = positives
        .iter()
        .chain(negatives)
        .map(|t| model.phoneme_forward(g, t))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let x = g.concat_rows(&speech)?;
    let y = g.concat_rows(&phon)?;
    let s = cosine_similarity(g, x, y)?;
    let z = PairLabels::with_hard_negatives(mels.len(), negatives.len());
    let (t, b) = (g.param(model.t_log), g.param(model.bias));
    siglip_loss(g, s, &z, t, b)
}

/// Model, optimizer and random state of one training run.
pub struct Trainer {
    pub model: DualEncoderModel,
    pub vocab: UnigramVocab,
    pub cfg: TrainConfig,
    opt: AdamW,
    inventories: InventoryBook,
    rng: ChaCha8Rng,
    step: usize,
    cursors: Vec<(Vec<usize>, usize)>,
}

impl Trainer {
    /// Builds the optimizer and the per-language replacement inventories
    /// from every transcription in `sources`.
    pub fn new(model: DualEncoderModel, vocab: UnigramVocab, cfg: TrainConfig, sources: &[TrainSource]) -> Result<Self> {
        cfg.validate()?;
        if sources.is_empty() || sources.iter().any(|s| s.items.is_empty()) {
            return Err(TrainError::ManifestEmpty);
        }
        let seqs: Vec<&PhonemeSequence> = sources.iter().flat_map(|s| s.items.iter().map(|i| &i.phonemes)).collect();
        let inventories = InventoryBook::from_sequences(seqs.iter().copied())?;
        let opt = AdamW::new(
            &model.store,
            AdamWConfig {
                weight_decay: cfg.weight_decay,
                ..AdamWConfig::default()
            },
        );
        Ok(Trainer {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            model,
            vocab,
            opt,
            inventories,
            step: 0,
            cursors: vec![(Vec::new(), 0); sources.len()],
            cfg,
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Continues the schedule from `step`, as when resuming from a
    /// checkpoint. Optimizer moments restart from zero.
    pub fn resume_at(&mut self, step: usize) {
        self.step = step;
    }

    pub fn tokens(&self, seq: &PhonemeSequence) -> TokenSequence {
        tokenize_phonemes(&self.vocab, seq, self.model.cfg.max_positions)
    }

    /// One hard negative per item: a minimal pair for words, a 10%
    /// corruption for utterances.
    pub fn hard_negative(&mut self, seq: &PhonemeSequence, level: SourceLevel) -> Result<PhonemeSequence> {
        let inv = self.inventories.for_lang(&seq.lang);
        Ok(match level {
            SourceLevel::Word => minimal_pair(seq, inv, &mut self.rng)?,
            SourceLevel::Utterance => corrupt_sentence(seq, self.cfg.corruption_rate, inv, &mut self.rng)?,
        })
    }

    /// Next batch of `source`: walks a shuffled order, reshuffling at the
    /// end of each pass, and skips items whose transcription is already in
    /// the batch so that no in-batch negative is a true match.
    pub fn next_batch<'s>(&mut self, source_index: usize, source: &'s TrainSource) -> Vec<&'s TrainItem> {
        let want = source.batch_size(&self.cfg);
        let n = source.items.len();
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(want);
        let (order, pos) = &mut self.cursors[source_index];
        for _ in 0..2 * n {
            if out.len() == want {
                break;
            }
            if *pos >= order.len() {
                *order = (0..n).collect();
                order.shuffle(&mut self.rng);
                *pos = 0;
            }
            let item = &source.items[order[*pos]];
            *pos += 1;
            if seen.insert(item.phonemes.symbols.clone()) {
                out.push(item);
            }
        }
        out
    }

    /// Forward, backward, clip and update on one batch from a single source.
    pub fn train_step(&mut self, source_index: usize, batch: &[&TrainItem], level: SourceLevel) -> Result<StepMetrics> {
        self.step += 1;
        let lr = lr_schedule(self.step, &self.cfg);
        let aug = SpecAugmentConfig::default();
        let mels: Vec<MelSpectrogram> = batch
            .iter()
            .map(|it| {
                if self.cfg.spec_augment {
                    spec_augment(&it.mel, &aug, &mut self.rng)
                } else {
                    it.mel.clone()
                }
            })
            .collect();
        let positives: Vec<TokenSequence> = batch.iter().map(|it| self.tokens(&it.phonemes)).collect();
        let mut negatives = Vec::new();
        if self.cfg.hard_negatives {
            for it in batch {
                let neg = self.hard_negative(&it.phonemes, level)?;
                negatives.push(self.tokens(&neg));
            }
        }
        let (loss, mut grads) = {
            let mut g = Graph::new(&self.model.store);
            let l = batch_loss(&self.model, &mut g, &mels, &positives, &negatives)?;
            (g.scalar(l), g.backward(l)?)
        };
        let grad_norm = clip_global_norm(&mut grads, self.cfg.clip_norm);
        self.opt.step(&mut self.model.store, &grads, lr);
        Ok(StepMetrics {
            step: self.step,
            source: source_index,
            batch_size: batch.len(),
            loss,
            grad_norm,
            lr,
        })
    }
}

/// Runs the remaining steps, cycling through `sources` one batch at a time.
/// With `out`, appends each step to `metrics.tsv`, saves
/// `step-NNNNNN.ckpt` every `checkpoint_every` steps and `final.ckpt` at
/// the end.
pub fn train_loop(trainer: &mut Trainer, sources: &[TrainSource], out: Option<&Path>) -> Result<Vec<StepMetrics>> {
    if sources.is_empty() || sources.iter().any(|s| s.items.is_empty()) {
        return Err(TrainError::ManifestEmpty);
    }
    let mut log = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join("metrics.tsv");
            let f = if trainer.step == 0 || !path.exists() {
                let mut f = File::create(&path)?;
                writeln!(f, "{METRICS_HEADER}")?;
                f
            } else {
                OpenOptions::new().append(true).open(&path)?
            };
            Some(f)
        }
        None => None,
    };
    let mut history = Vec::new();
    while trainer.step < trainer.cfg.total_steps {
        let k = trainer.step % sources.len();
        let batch = trainer.next_batch(k, &sources[k]);
        let m = trainer.train_step(k, &batch, sources[k].level)?;
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", m.tsv_line())?;
        }
        if let (Some(dir), every) = (out, trainer.cfg.checkpoint_every) {
            if every > 0 && m.step % every == 0 {
                trainer.model.save(dir.join(format!("step-{:06}.ckpt", m.step)))?;
            }
        }
        history.push(m);
    }
    if let Some(dir) = out {
        trainer.model.save(dir.join("final.ckpt"))?;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::N_MELS;
    use crate::ipa::normalize_ipa;
    use rand::Rng;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            preset: "desk".into(),
            hidden_dim: Some(16),
            num_layers: Some(1),
            num_heads: Some(2),
            intermediate_dim: Some(32),
            peak_lr: 3e-3,
            warmup_steps: 2,
            total_steps: 8,
            word_batch_size: 4,
            utterance_batch_size: 2,
            ..TrainConfig::default()
        }
    }

    fn item(id: &str, ipa: &str, seed: u64) -> TrainItem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = 12;
        let data = (0..frames * N_MELS).map(|_| rng.gen_range(-1.0..1.0)).collect();
        TrainItem {
            id: id.into(),
            mel: MelSpectrogram::from_frames(data, vec![true; frames]),
            phonemes: normalize_ipa(ipa).unwrap(),
        }
    }

    fn sources() -> Vec<TrainSource> {
        let words = ["pa", "ti", "ku", "ma", "sil", "nor"];
        let sents = ["pa ti ku", "ma sil nor", "ku ma pa", "nor ti sil"];
        vec![
            TrainSource {
                name: "words".into(),
                level: SourceLevel::Word,
                items: words.iter().enumerate().map(|(i, w)| item(&format!("w{i}"), w, i as u64)).collect(),
            },
            TrainSource {
                name: "sents".into(),
                level: SourceLevel::Utterance,
                items: sents.iter().enumerate().map(|(i, w)| item(&format!("s{i}"), w, 100 + i as u64)).collect(),
            },
        ]
    }

    fn trainer(cfg: TrainConfig, srcs: &[TrainSource]) -> Trainer {
        let vocab = UnigramVocab::from_pieces(Vec::new(), true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = DualEncoderModel::new(cfg.encoder_config().unwrap(), vocab.len(), &mut rng).unwrap();
        Trainer::new(model, vocab, cfg, srcs).unwrap()
    }

    #[test]
    fn sources_alternate_with_their_batch_sizes() {
        let srcs = sources();
        let mut t = trainer(tiny_cfg(), &srcs);
        let hist = train_loop(&mut t, &srcs, None).unwrap();
        let sizes: Vec<(usize, usize)> = hist.iter().map(|m| (m.source, m.batch_size)).collect();
        assert_eq!(sizes, [(0, 4), (1, 2), (0, 4), (1, 2), (0, 4), (1, 2), (0, 4), (1, 2)]);
        assert!(hist.iter().all(|m| m.loss.is_finite() && m.grad_norm.is_finite()));
    }

    #[test]
    fn named_source_batch_size_wins() {
        let srcs = sources();
        let mut cfg = tiny_cfg();
        cfg.source_batch_sizes.insert("sents".into(), 3);
        assert_eq!(srcs[1].batch_size(&cfg), 3);
        assert_eq!(srcs[0].batch_size(&cfg), 4);
    }

    #[test]
    fn runs_are_reproducible() {
        let srcs = sources();
        let a = train_loop(&mut trainer(tiny_cfg(), &srcs), &srcs, None).unwrap();
        let b = train_loop(&mut trainer(tiny_cfg(), &srcs), &srcs, None).unwrap();
        assert_eq!(a, b);
        let mut cfg = tiny_cfg();
        cfg.seed = 1;
        let c = train_loop(&mut trainer(cfg, &srcs), &srcs, None).unwrap();
        assert_ne!(a[0].loss, c[0].loss);
    }

    #[test]
    fn temperature_and_bias_are_learned() {
        let srcs = sources();
        let mut t = trainer(tiny_cfg(), &srcs);
        let before = (t.model.store.get(t.model.t_log).data[0], t.model.store.get(t.model.bias).data[0]);
        assert!((before.0 - 10f64.ln()).abs() < 1e-12 && before.1 == -10.0);
        train_loop(&mut t, &srcs, None).unwrap();
        let after = (t.model.store.get(t.model.t_log).data[0], t.model.store.get(t.model.bias).data[0]);
        assert_ne!(before.0, after.0);
        assert_ne!(before.1, after.1);
    }

    #[test]
    fn batches_never_repeat_a_transcription() {
        let mut srcs = sources();
        srcs[0].items.push(item("dup", "pa", 50));
        srcs[0].items.push(item("dup2", "pa", 51));
        let mut cfg = tiny_cfg();
        cfg.word_batch_size = 6;
        let mut t = trainer(cfg, &srcs);
        for _ in 0..20 {
            let b = t.next_batch(0, &srcs[0]);
            assert_eq!(b.len(), 6);
            let keys: HashSet<_> = b.iter().map(|i| i.phonemes.text()).collect();
            assert_eq!(keys.len(), 6);
        }
    }

    #[test]
    fn hard_negatives_differ_from_the_positive() {
        let srcs = sources();
        let mut t = trainer(tiny_cfg(), &srcs);
        for it in srcs.iter().flat_map(|s| s.items.iter().map(move |i| (i, s.level))) {
            let neg = t.hard_negative(&it.0.phonemes, it.1).unwrap();
            assert_ne!(neg.symbols, it.0.phonemes.symbols);
        }
    }

    #[test]
    fn loss_descends_on_a_fixed_batch() {
        let srcs = sources();
        let mut cfg = tiny_cfg();
        cfg.total_steps = 200;
        cfg.warmup_steps = 10;
        cfg.spec_augment = false;
        cfg.hard_negatives = false;
        let mut t = trainer(cfg, &srcs);
        let batch: Vec<&TrainItem> = srcs[0].items.iter().take(4).collect();
        let first = t.train_step(0, &batch, SourceLevel::Word).unwrap().loss;
        let mut last = first;
        for _ in 1..200 {
            last = t.train_step(0, &batch, SourceLevel::Word).unwrap().loss;
        }
        assert!(last < 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn loop_writes_metrics_and_checkpoints() {
        let srcs = sources();
        let mut cfg = tiny_cfg();
        cfg.checkpoint_every = 4;
        let mut t = trainer(cfg, &srcs);
        let dir = tempfile::tempdir().unwrap();
        train_loop(&mut t, &srcs, Some(dir.path())).unwrap();
        let tsv = std::fs::read_to_string(dir.path().join("metrics.tsv")).unwrap();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 9);
        assert!(lines[1].starts_with("1\t0\t4\t"));
        for f in ["step-000004.ckpt", "step-000008.ckpt", "final.ckpt"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let back = DualEncoderModel::load(dir.path().join("final.ckpt")).unwrap();
        assert_eq!(back.cfg, t.model.cfg);
    }

    #[test]
    fn empty_sources_are_rejected() {
        let mut srcs = sources();
        srcs[1].items.clear();
        let vocab = UnigramVocab::from_pieces(Vec::new(), true).unwrap();
        let cfg = tiny_cfg();
        let model = DualEncoderModel::new(cfg.encoder_config().unwrap(), vocab.len(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(Trainer::new(model, vocab, cfg, &srcs), Err(TrainError::ManifestEmpty)));
    }
}
