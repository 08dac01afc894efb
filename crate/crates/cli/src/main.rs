//! Command-line front end: corpus tools, tokenizer and model training,
//! embedding, indexing, retrieval and evaluation.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use phonokws::audio::load_wav;
use phonokws::corpus::{
    filter_manifest, generate_synthetic_corpus, validate_manifest, write_manifest, write_synthetic_corpus, Manifest, Split,
    SyntheticSpec,
};
use phonokws::encoders::{mlm_step, DualEncoderModel, Embedding, EncoderError};
use phonokws::eval::{embed_items, evaluate_retrieval, format_table, write_report, Direction, EvalItem, MetricRow};
use phonokws::ipa::{ipa_to_xsampa, normalize_ipa, xsampa_to_ipa, PhonemeSequence};
use phonokws::negatives::{corrupt_sentence, minimal_pair, PhonemeInventory};
use phonokws::numerics::{AdamW, AdamWConfig};
use phonokws::retrieval::{build_store, load_store, save_store, search_excluding, RetrievalResult};
use phonokws::tokenizer::{train_unigram, TrainerConfig, UnigramVocab};
use phonokws::training::{
    featurize, items_from_manifest, lr_schedule, tokenize_phonemes, train_loop, SourceLevel, TrainConfig, TrainSource,
    Trainer,
};

#[derive(Parser)]
#[command(name = "phonokws", version, about = "Phoneme and speech embeddings for open-vocabulary keyword retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic tonal corpus: WAV files plus manifest.jsonl.
    Synth(SynthArgs),
    /// Check every manifest record; exits non-zero on any error.
    Validate(ValidateArgs),
    /// Drop rare words and cap frequent ones.
    Filter(FilterArgs),
    /// Train a unigram tokenizer on manifest transcriptions.
    TokenizerTrain(TokenizerArgs),
    /// Masked-token pretraining of the phoneme encoder.
    PretrainMlm(PretrainArgs),
    /// Contrastive training of both encoders.
    Train(TrainArgs),
    /// Encode a manifest split into JSONL embeddings.
    Embed(EmbedArgs),
    /// Pack JSONL embeddings into a binary store.
    IndexBuild(IndexArgs),
    /// Top-k search of a store.
    Retrieve(RetrieveArgs),
    /// Retrieval metrics on a manifest split or precomputed items.
    Evaluate(EvaluateArgs),
    /// Hard negatives of transcriptions.
    Mutate(MutateArgs),
    /// Convert X-SAMPA to IPA (or back with --reverse).
    Xsampa2ipa(XsampaArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 24)]
    inventory: usize,
    #[arg(long, default_value_t = 300)]
    words: usize,
    #[arg(long, default_value_t = 2)]
    min_len: usize,
    #[arg(long, default_value_t = 6)]
    max_len: usize,
    #[arg(long, default_value_t = 8)]
    clips_per_word: usize,
    #[arg(long, default_value_t = 4)]
    speakers: usize,
    #[arg(long, default_value_t = 0.2)]
    unseen_fraction: f64,
    #[arg(long, default_value_t = 2)]
    heldout_clips: usize,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Skip checking that audio files exist.
    #[arg(long)]
    no_audio_check: bool,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    min_freq: usize,
    #[arg(long, default_value_t = 10)]
    cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TokenizerArgs {
    #[arg(long, required = true)]
    manifest: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Total ids, specials and byte tokens included.
    #[arg(long, default_value_t = 500)]
    vocab_size: usize,
    #[arg(long, default_value_t = 8)]
    max_piece_chars: usize,
    #[arg(long, default_value = "train")]
    split: Split,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value = "desk")]
    preset: String,
    /// `key = value` hyperparameters applied over the preset defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long, required = true)]
    manifest: Vec<PathBuf>,
    #[arg(long)]
    tokenizer: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Word-level manifest; one source per file.
    #[arg(long)]
    manifest: Vec<PathBuf>,
    /// Utterance-level manifest; one source per file.
    #[arg(long)]
    utterance_manifest: Vec<PathBuf>,
    #[arg(long)]
    tokenizer: PathBuf,
    /// Directory for metrics.tsv and checkpoints.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Start from this checkpoint, for example a pretrained phoneme encoder.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Continue the schedule from this step.
    #[arg(long, default_value_t = 0, requires = "init")]
    start_step: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Word,
    Utterance,
}

impl From<Level> for SourceLevel {
    fn from(l: Level) -> Self {
        match l {
            Level::Word => SourceLevel::Word,
            Level::Utterance => SourceLevel::Utterance,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    Speech,
    Phoneme,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    tokenizer: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, value_enum)]
    modality: ModalityArg,
    #[arg(long, value_enum, default_value = "word")]
    level: Level,
    /// JSONL embeddings to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IndexArgs {
    /// JSONL embeddings, all of one modality.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// JSONL query embeddings.
    #[arg(long, conflicts_with_all = ["ipa", "audio"])]
    queries: Option<PathBuf>,
    /// IPA query; needs --model and --tokenizer.
    #[arg(long, requires_all = ["model", "tokenizer"])]
    ipa: Vec<String>,
    /// WAV query; needs --model.
    #[arg(long, requires = "model")]
    audio: Vec<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    /// Leave out a stored item whose id equals the query id.
    #[arg(long)]
    exclude_self: bool,
    /// JSONL results to write; printed only when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    P2s,
    S2p,
    S2s,
    All,
}

impl DirectionArg {
    fn directions(self) -> Vec<Direction> {
        match self {
            DirectionArg::P2s => vec![Direction::PhonemeToSpeech],
            DirectionArg::S2p => vec![Direction::SpeechToPhoneme],
            DirectionArg::S2s => vec![Direction::SpeechToSpeech],
            DirectionArg::All => Direction::ALL.to_vec(),
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// Precomputed JSONL items (id, lang, key, speech, phoneme).
    #[arg(long, conflicts_with_all = ["model", "manifest"])]
    items: Option<PathBuf>,
    #[arg(long, requires_all = ["tokenizer", "manifest"])]
    model: Option<PathBuf>,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, value_enum, default_value = "word")]
    level: Level,
    #[arg(long, value_enum, default_value = "all")]
    direction: DirectionArg,
    /// JSONL report to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the embedded items as JSONL.
    #[arg(long)]
    save_items: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MutationKind {
    MinimalPair,
    Corrupt,
}

#[derive(Args)]
struct MutateArgs {
    /// Transcriptions; read from standard input, one per line, when absent.
    #[arg(long)]
    ipa: Vec<String>,
    #[arg(long, value_enum, default_value = "minimal-pair")]
    kind: MutationKind,
    #[arg(long, default_value_t = 0.1)]
    rate: f64,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draw replacement phonemes from this manifest instead of the inputs.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct XsampaArgs {
    /// Strings to convert; read from standard input, one per line, when absent.
    input: Vec<String>,
    /// Convert IPA to X-SAMPA instead.
    #[arg(long)]
    reverse: bool,
}

/// Prints a usage error naming the offending flag and exits with status 2.
fn usage(msg: impl std::fmt::Display) -> ! {
    Cli::command().error(ErrorKind::ArgumentConflict, msg).exit()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", path.display()))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

fn stdin_lines() -> Result<Vec<String>> {
    let mut out = Vec::new();
    for line in std::io::stdin().lock().lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(line.trim().to_string());
        }
    }
    Ok(out)
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    Manifest::load(path).with_context(|| format!("loading {}", path.display()))
}

fn load_vocab(path: &Path) -> Result<UnigramVocab> {
    UnigramVocab::load(path).with_context(|| format!("loading tokenizer {}", path.display()))
}

fn load_model(path: &Path) -> Result<DualEncoderModel> {
    DualEncoderModel::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Preset defaults (the CPU schedule for `desk`), then the config file, then flags.
fn train_config(args: &ModelArgs) -> Result<TrainConfig> {
    let mut cfg = if args.preset == "desk" {
        TrainConfig::desk()
    } else {
        TrainConfig {
            preset: args.preset.clone(),
            ..TrainConfig::default()
        }
    };
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg = TrainConfig::parse_over(cfg, &text).with_context(|| format!("in {}", path.display()))?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = args.steps {
        cfg.total_steps = steps;
        cfg.warmup_steps = cfg.warmup_steps.min(steps.saturating_sub(1));
    }
    if let Err(e) = cfg.encoder_config() {
        usage(format!("invalid value for '--preset': {e}"));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        inventory_size: a.inventory,
        word_count: a.words,
        min_word_len: a.min_len,
        max_word_len: a.max_len,
        clips_per_word: a.clips_per_word,
        speakers: a.speakers,
        unseen_fraction: a.unseen_fraction,
        heldout_clips: a.heldout_clips,
        noise: a.noise,
        ..SyntheticSpec::default()
    };
    let corpus = generate_synthetic_corpus(&spec, a.seed)?;
    write_synthetic_corpus(&a.out, &corpus)?;
    let count = |s| corpus.indices(s).len();
    println!(
        "wrote {} clips of {} words to {} (train {}, dev {}, test {})",
        corpus.records.len(),
        corpus.words.len(),
        a.out.display(),
        count(Split::Train),
        count(Split::Dev),
        count(Split::Test)
    );
    Ok(())
}

fn validate(a: ValidateArgs) -> Result<ExitCode> {
    let report = validate_manifest(&a.manifest, !a.no_audio_check)?;
    println!("accepted {}, errors {}", report.accepted, report.errors.len());
    for (lang, t) in &report.per_lang {
        println!("{lang}\t{} records\t{:.2} s", t.records, t.duration);
    }
    for (line, msg) in &report.errors {
        println!("line {line}: {msg}");
    }
    Ok(if report.is_ok() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn filter(a: FilterArgs) -> Result<()> {
    let m = load_manifest(&a.manifest)?;
    let kept = filter_manifest(&m.records, a.min_freq, a.cap, a.seed);
    write_manifest(&a.out, &kept)?;
    println!("kept {} of {} records", kept.len(), m.records.len());
    Ok(())
}

fn transcriptions(paths: &[PathBuf], split: Split) -> Result<Vec<PhonemeSequence>> {
    let mut out = Vec::new();
    for p in paths {
        for rec in load_manifest(p)?.split(split) {
            out.push(rec.phonemes()?);
        }
    }
    Ok(out)
}

fn tokenizer_train(a: TokenizerArgs) -> Result<()> {
    let texts: Vec<String> = transcriptions(&a.manifest, a.split)?.iter().map(PhonemeSequence::text).collect();
    let cfg = TrainerConfig {
        target_vocab: a.vocab_size,
        max_piece_chars: a.max_piece_chars,
        ..TrainerConfig::default()
    };
    let (vocab, report) = train_unigram(&texts, &cfg)?;
    vocab.save(&a.out)?;
    println!(
        "trained on {} transcriptions: {} ids ({} pieces from {} seeds)",
        texts.len(),
        vocab.len(),
        vocab.pieces().len(),
        report.seed_pieces
    );
    Ok(())
}

fn pretrain_mlm(a: PretrainArgs) -> Result<()> {
    let cfg = train_config(&a.model)?;
    let vocab = load_vocab(&a.tokenizer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = DualEncoderModel::new(cfg.encoder_config()?, vocab.len(), &mut rng)?;
    let mut seqs: Vec<_> = transcriptions(&a.manifest, Split::Train)?
        .iter()
        .map(|s| tokenize_phonemes(&vocab, s, model.cfg.max_positions))
        .collect();
    if seqs.is_empty() {
        anyhow::bail!("no training transcriptions");
    }
    let mut opt = AdamW::new(
        &model.store,
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
    );
    let batch = a.batch_size.clamp(1, seqs.len());
    let mut pos = seqs.len();
    let mut recent = Vec::new();
    for step in 1..=cfg.total_steps {
        if pos + batch > seqs.len() {
            seqs.shuffle(&mut rng);
            pos = 0;
        }
        let lr = lr_schedule(step, &cfg);
        match mlm_step(&mut model, &mut opt, &seqs[pos..pos + batch], lr, cfg.clip_norm, &mut rng) {
            Ok(loss) => recent.push(loss),
            Err(EncoderError::NoMaskedPositions) => {}
            Err(e) => return Err(e.into()),
        }
        pos += batch;
        if step % 100 == 0 || step == cfg.total_steps {
            let mean = recent.iter().sum::<f64>() / recent.len().max(1) as f64;
            println!("step {step}\tloss {mean:.4}\tlr {lr:.3e}");
            recent.clear();
        }
    }
    model.save(&a.out)?;
    println!("saved {}", a.out.display());
    Ok(())
}

fn source_name(path: &Path, taken: &mut BTreeSet<String>) -> String {
    let stem = path.file_stem().map_or("source".into(), |s| s.to_string_lossy().to_lowercase());
    let mut name = stem.clone();
    let mut k = 2;
    while !taken.insert(name.clone()) {
        name = format!("{stem}-{k}");
        k += 1;
    }
    name
}

fn train(a: TrainArgs) -> Result<()> {
    if a.manifest.is_empty() && a.utterance_manifest.is_empty() {
        usage("at least one '--manifest' or '--utterance-manifest' is required");
    }
    let cfg = train_config(&a.model)?;
    let vocab = load_vocab(&a.tokenizer)?;
    let model = match &a.init {
        Some(p) => {
            let m = load_model(p)?;
            if m.vocab_size != vocab.len() {
                anyhow::bail!("checkpoint has {} token ids, tokenizer has {}", m.vocab_size, vocab.len());
            }
            m
        }
        None => DualEncoderModel::new(cfg.encoder_config()?, vocab.len(), &mut ChaCha8Rng::seed_from_u64(cfg.seed))?,
    };
    let max_frames = 2 * model.cfg.max_positions;
    let mut taken = BTreeSet::new();
    let mut sources = Vec::new();
    let tagged = a
        .manifest
        .iter()
        .map(|p| (p, SourceLevel::Word))
        .chain(a.utterance_manifest.iter().map(|p| (p, SourceLevel::Utterance)));
    for (path, level) in tagged {
        let m = load_manifest(path)?;
        let items = items_from_manifest(&m, Split::Train, level, max_frames)?;
        let name = source_name(path, &mut taken);
        println!("source {name}: {} training items", items.len());
        sources.push(TrainSource { name, level, items });
    }
    let mut trainer = Trainer::new(model, vocab, cfg, &sources)?;
    trainer.resume_at(a.start_step);
    let history = train_loop(&mut trainer, &sources, Some(&a.out))?;
    let tail = &history[history.len().saturating_sub(50)..];
    if !tail.is_empty() {
        println!(
            "finished step {}; mean loss over the last {} steps {:.4}",
            trainer.step(),
            tail.len(),
            tail.iter().map(|m| m.loss).sum::<f64>() / tail.len() as f64
        );
    }
    println!("checkpoints and metrics.tsv in {}", a.out.display());
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let vocab = load_vocab(&a.tokenizer)?;
    let m = load_manifest(&a.manifest)?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in m.split(a.split) {
        match a.modality {
            ModalityArg::Speech => {
                let mel = featurize(&m.load_audio(rec)?, a.level.into(), 2 * model.cfg.max_positions)?;
                out.push(model.embed_speech(rec.audio.clone(), &mel)?);
            }
            ModalityArg::Phoneme => {
                let seq = rec.phonemes()?;
                let key = seq.text();
                if seen.insert(key.clone()) {
                    out.push(model.embed_phonemes(key, &tokenize_phonemes(&vocab, &seq, model.cfg.max_positions))?);
                }
            }
        }
    }
    write_jsonl(&a.out, &out)?;
    println!("wrote {} embeddings to {}", out.len(), a.out.display());
    Ok(())
}

fn index_build(a: IndexArgs) -> Result<()> {
    let mut all: Vec<Embedding> = Vec::new();
    for p in &a.input {
        all.extend(read_jsonl::<Embedding>(p)?);
    }
    let store = build_store(&all)?;
    save_store(&store, &a.out)?;
    println!(
        "indexed {} {} embeddings of dimension {} in {}",
        store.len(),
        store.modality().as_str(),
        store.dim(),
        a.out.display()
    );
    Ok(())
}

fn retrieve(a: RetrieveArgs) -> Result<()> {
    if a.queries.is_none() && a.ipa.is_empty() && a.audio.is_empty() {
        usage("one of '--queries', '--ipa' or '--audio' is required");
    }
    let store = load_store(&a.index)?;
    let mut queries: Vec<Embedding> = Vec::new();
    if let Some(p) = &a.queries {
        queries = read_jsonl(p)?;
    }
    if !a.ipa.is_empty() || !a.audio.is_empty() {
        let model = load_model(a.model.as_deref().expect("required by clap"))?;
        if !a.ipa.is_empty() {
            let vocab = load_vocab(a.tokenizer.as_deref().expect("required by clap"))?;
            for raw in &a.ipa {
                let seq = normalize_ipa(raw)?;
                queries.push(model.embed_phonemes(seq.text(), &tokenize_phonemes(&vocab, &seq, model.cfg.max_positions))?);
            }
        }
        for path in &a.audio {
            let mel = featurize(&load_wav(path)?, SourceLevel::Word, 2 * model.cfg.max_positions)?;
            queries.push(model.embed_speech(path.display().to_string(), &mel)?);
        }
    }
    if queries.is_empty() {
        bail!("no queries to search");
    }
    let mut results: Vec<RetrievalResult> = Vec::with_capacity(queries.len());
    for q in &queries {
        let exclude = a.exclude_self.then_some(q.id.as_str());
        results.push(search_excluding(&store, q, a.k, exclude)?);
    }
    let rows: Vec<serde_json::Value> = results
        .iter()
        .map(|r| {
            serde_json::json!({
                "query": r.query,
                "hits": r.hits.iter().map(|(id, s)| serde_json::json!({"id": id, "score": s})).collect::<Vec<_>>(),
            })
        })
        .collect();
    match &a.out {
        Some(p) => {
            write_jsonl(p, &rows)?;
            println!("wrote results for {} queries to {}", results.len(), p.display());
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            for r in &results {
                for (rank, (id, s)) in r.hits.iter().enumerate() {
                    writeln!(stdout, "{}\t{}\t{}\t{:.6}", r.query, rank + 1, id, s)?;
                }
            }
        }
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let items: Vec<EvalItem> = match (&a.items, &a.model) {
        (Some(p), _) => read_jsonl(p)?,
        (None, Some(model_path)) => {
            let model = load_model(model_path)?;
            let vocab = load_vocab(a.tokenizer.as_deref().expect("required by clap"))?;
            let m = load_manifest(a.manifest.as_deref().expect("required by clap"))?;
            let mut inputs = Vec::new();
            for rec in m.split(a.split) {
                let mel = featurize(&m.load_audio(rec)?, a.level.into(), 2 * model.cfg.max_positions)?;
                inputs.push((rec.audio.clone(), rec.phonemes()?, mel));
            }
            embed_items(&model, &vocab, &inputs)?
        }
        (None, None) => usage("either '--items' or '--model' with '--tokenizer' and '--manifest' is required"),
    };
    if let Some(p) = &a.save_items {
        write_jsonl(p, &items)?;
    }
    let mut rows: Vec<MetricRow> = Vec::new();
    for d in a.direction.directions() {
        rows.extend(evaluate_retrieval(&items, d)?);
    }
    write_report(&a.out, &rows)?;
    print!("{}", format_table(&rows));
    Ok(())
}

fn mutate(a: MutateArgs) -> Result<()> {
    let raw = if a.ipa.is_empty() { stdin_lines()? } else { a.ipa.clone() };
    let inputs: Vec<PhonemeSequence> = raw.iter().map(|s| normalize_ipa(s)).collect::<Result<_, _>>()?;
    let inventory = match &a.manifest {
        Some(p) => PhonemeInventory::from_sequences(transcriptions(std::slice::from_ref(p), Split::Train)?.iter())?,
        None => PhonemeInventory::from_sequences(inputs.iter())?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut stdout = std::io::stdout().lock();
    for seq in &inputs {
        for _ in 0..a.count {
            let out = match a.kind {
                MutationKind::MinimalPair => minimal_pair(seq, &inventory, &mut rng)?,
                MutationKind::Corrupt => corrupt_sentence(seq, a.rate, &inventory, &mut rng)?,
            };
            writeln!(stdout, "{}\t{}", seq.text(), out.text())?;
        }
    }
    Ok(())
}

fn xsampa(a: XsampaArgs) -> Result<()> {
    let inputs = if a.input.is_empty() { stdin_lines()? } else { a.input };
    let mut stdout = std::io::stdout().lock();
    for s in &inputs {
        let out = if a.reverse { ipa_to_xsampa(s)? } else { xsampa_to_ipa(s)? };
        writeln!(stdout, "{out}")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth(a) => synth(a)?,
        Command::Validate(a) => return validate(a),
        Command::Filter(a) => filter(a)?,
        Command::TokenizerTrain(a) => tokenizer_train(a)?,
        Command::PretrainMlm(a) => pretrain_mlm(a)?,
        Command::Train(a) => train(a)?,
        Command::Embed(a) => embed(a)?,
        Command::IndexBuild(a) => index_build(a)?,
        Command::Retrieve(a) => retrieve(a)?,
        Command::Evaluate(a) => evaluate(a)?,
        Command::Mutate(a) => mutate(a)?,
        Command::Xsampa2ipa(a) => xsampa(a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
