use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::{hz_to_mel, mel_to_hz, write_wav, AudioClip, SAMPLE_RATE};
use crate::ipa::{serialize, LanguageTag, PhonemeSequence, PhonemeSymbol};

use super::{write_manifest, CorpusError, ManifestRecord, Result, Split};

/// Candidate segment symbols, most familiar first; an inventory of size n
/// uses the first n.
pub const SYNTH_SYMBOLS: [char; 64] = [
    'p', 't', 'k', 'b', 'd', 'g', 'm', 'n', 's', 'z', 'f', 'v', 'l', 'r', 'j', 'w', 'a', 'e', 'i', 'o', 'u', 'ə', 'ɛ',
    'ɔ', 'q', 'ɢ', 'ŋ', 'ɲ', 'ɳ', 'ɴ', 'ʃ', 'ʒ', 'x', 'ɣ', 'χ', 'ʁ', 'h', 'ɦ', 'θ', 'ð', 'ç', 'ʝ', 'ɭ', 'ʎ', 'ʟ', 'ɾ',
    'ɽ', 'ʀ', 'ɥ', 'ɰ', 'ʋ', 'ɹ', 'ɻ', 'y', 'ɨ', 'ʉ', 'ɯ', 'ɪ', 'ʏ', 'ʊ', 'ø', 'ɘ', 'ɵ', 'æ',
];

const LOW_HZ: f64 = 300.0;
const HIGH_HZ: f64 = 7000.0;
const TONE_MS: usize = 100;
const GAP_MS: usize = 20;
const RAMP_MS: usize = 10;
const MAX_OFFSET_MS: usize = 40;

/// Shape of a synthetic corpus in which every phoneme is a fixed tone pair
/// in its own frequency band and a word is its phonemes' tones in sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub inventory_size: usize,
    pub word_count: usize,
    pub min_word_len: usize,
    pub max_word_len: usize,
    pub clips_per_word: usize,
    pub speakers: usize,
    /// Fraction of word forms held out entirely (the `test` split).
    pub unseen_fraction: f64,
    /// Clips per seen word kept out of training (the `dev` split).
    pub heldout_clips: usize,
    /// Standard deviation of added white noise.
    pub noise: f64,
    pub lang: LanguageTag,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            inventory_size: 24,
            word_count: 300,
            min_word_len: 2,
            max_word_len: 6,
            clips_per_word: 8,
            speakers: 4,
            unseen_fraction: 0.2,
            heldout_clips: 2,
            noise: 0.01,
            lang: "und".parse().expect("valid tag"),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.inventory_size > SYNTH_SYMBOLS.len() {
            return Err(CorpusError::InventoryTooLarge(self.inventory_size));
        }
        let bad = |m: &str| Err(CorpusError::BadSpec(m.into()));
        if self.inventory_size < 2 {
            return bad("inventory needs at least 2 symbols");
        }
        if self.min_word_len == 0 || self.min_word_len > self.max_word_len {
            return bad("word lengths must satisfy 1 <= min <= max");
        }
        let unit = TONE_MS + GAP_MS;
        if MAX_OFFSET_MS + self.max_word_len * unit > 1000 {
            return bad("the longest word does not fit in one second");
        }
        if self.clips_per_word == 0 || self.speakers == 0 || self.heldout_clips >= self.clips_per_word {
            return bad("need clips, speakers and fewer held-out clips than clips per word");
        }
        if !(0.0..1.0).contains(&self.unseen_fraction) || self.noise.is_nan() || self.noise < 0.0 {
            return bad("unseen fraction must lie in [0, 1) and noise be non-negative");
        }
        // Distinct forms with no repeated neighbour: n·(n−1)^(L−1) per length.
        let n = self.inventory_size as f64;
        let forms: f64 = (self.min_word_len..=self.max_word_len)
            .map(|l| n * (n - 1.0).powi(l as i32 - 1))
            .sum();
        if forms < 2.0 * self.word_count as f64 {
            return bad("too few possible word forms for the requested word count");
        }
        Ok(())
    }

    pub fn inventory(&self) -> Vec<PhonemeSymbol> {
        SYNTH_SYMBOLS[..self.inventory_size]
            .iter()
            .map(|&c| PhonemeSymbol::new(c).expect("synthetic symbols are whitelisted"))
            .collect()
    }

    /// Nominal frequencies of phoneme `p`'s two tones. Bands are equal
    /// slices of the mel scale between 300 Hz and 7 kHz; the tones sit a
    /// quarter band either side of the centre.
    pub fn tone_freqs(&self, p: usize) -> [f64; 2] {
        let (lo, hi) = (hz_to_mel(LOW_HZ), hz_to_mel(HIGH_HZ));
        let width = (hi - lo) / self.inventory_size as f64;
        let centre = lo + (p as f64 + 0.5) * width;
        [mel_to_hz(centre - width / 4.0), mel_to_hz(centre + width / 4.0)]
    }

    /// Relative amplitudes of phoneme `p`'s tones.
    fn tone_weights(p: usize) -> [f64; 2] {
        [0.6 + 0.4 * ((p * 7 % 11) as f64 / 10.0), 0.6 + 0.4 * ((p * 5 % 13) as f64 / 12.0)]
    }
}

/// Per-speaker voice: one pitch factor and one gain for each phoneme.
#[derive(Debug, Clone)]
struct Speaker {
    pitch: Vec<f64>,
    gain: Vec<f64>,
}

impl Speaker {
    fn draw(n: usize, rng: &mut ChaCha8Rng) -> Self {
        Speaker {
            pitch: (0..n).map(|_| 1.0 + rng.gen_range(-0.01..0.01)).collect(),
            gain: (0..n).map(|_| rng.gen_range(0.7..1.3)).collect(),
        }
    }
}

/// Renders a phoneme-index sequence as one second of audio.
fn render(spec: &SyntheticSpec, word: &[usize], voice: &Speaker, rng: &mut ChaCha8Rng) -> AudioClip {
    let sr = SAMPLE_RATE as f64;
    let ms = |m: usize| m * SAMPLE_RATE as usize / 1000;
    let mut samples = vec![0.0f64; SAMPLE_RATE as usize];
    let mut start = ms(rng.gen_range(0..=MAX_OFFSET_MS));
    let (tone, ramp) = (ms(TONE_MS), ms(RAMP_MS));
    for &p in word {
        let freqs = spec.tone_freqs(p);
        let weights = SyntheticSpec::tone_weights(p);
        let phase: [f64; 2] = [rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..std::f64::consts::TAU)];
        for i in 0..tone {
            let env = if i < ramp {
                0.5 - 0.5 * (std::f64::consts::PI * i as f64 / ramp as f64).cos()
            } else if i >= tone - ramp {
                0.5 - 0.5 * (std::f64::consts::PI * (tone - 1 - i) as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            let t = i as f64 / sr;
            let v: f64 = (0..2)
                .map(|k| weights[k] * (std::f64::consts::TAU * freqs[k] * voice.pitch[p] * t + phase[k]).sin())
                .sum();
            samples[start + i] += 0.15 * voice.gain[p] * env * v;
        }
        start += ms(TONE_MS + GAP_MS);
    }
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).expect("finite noise");
        samples.iter_mut().for_each(|s| *s += normal.sample(rng));
    }
    let samples = samples.into_iter().map(|s| s.clamp(-1.0, 1.0) as f32).collect();
    AudioClip::new(samples, SAMPLE_RATE).expect("non-empty clip")
}

/// Renders `word` (indices into the inventory) with a fresh voice drawn
/// from `seed`; for probing a trained model with arbitrary sequences.
pub fn render_word(spec: &SyntheticSpec, word: &[usize], seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let voice = Speaker::draw(spec.inventory_size, &mut rng);
    render(spec, word, &voice, &mut rng)
}

/// An in-memory synthetic corpus: one record and one clip per rendering.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub spec: SyntheticSpec,
    pub inventory: Vec<PhonemeSymbol>,
    /// Word forms as inventory indices, with whether they occur in training.
    pub words: Vec<(Vec<usize>, bool)>,
    pub records: Vec<ManifestRecord>,
    pub clips: Vec<AudioClip>,
    /// Index into `words` for each record.
    pub word_of: Vec<usize>,
}

impl SyntheticCorpus {
    pub fn phonemes(&self, word: &[usize]) -> PhonemeSequence {
        PhonemeSequence::new(word.iter().map(|&p| self.inventory[p].clone()).collect(), self.spec.lang.clone())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].split == split).collect()
    }
}

fn draw_words(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let n = spec.inventory_size;
    let mut seen = BTreeSet::new();
    let mut words = Vec::with_capacity(spec.word_count);
    while words.len() < spec.word_count {
        let len = rng.gen_range(spec.min_word_len..=spec.max_word_len);
        let mut w: Vec<usize> = Vec::with_capacity(len);
        while w.len() < len {
            let p = rng.gen_range(0..n);
            if w.last() != Some(&p) {
                w.push(p);
            }
        }
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

/// Draws distinct word forms (no phoneme repeated back to back), holds a
/// fraction of them out as unseen, and renders every clip. Seen words put
/// their last `heldout_clips` clips in `dev`, the rest in `train`; unseen
/// words are all `test`. Every inventory phoneme occurs in some training
/// word. Clip `c` of a word is voiced by speaker `c mod speakers`.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let voices: Vec<Speaker> = (0..spec.speakers).map(|_| Speaker::draw(spec.inventory_size, &mut rng)).collect();
    let unseen = (spec.word_count as f64 * spec.unseen_fraction).round() as usize;
    let mut words = Vec::new();
    for _ in 0..100 {
        let mut drawn = draw_words(spec, &mut rng);
        drawn.shuffle(&mut rng);
        let covered: BTreeSet<usize> = drawn[unseen..].iter().flatten().copied().collect();
        if covered.len() == spec.inventory_size {
            words = drawn;
            break;
        }
    }
    if words.is_empty() {
        return Err(CorpusError::BadSpec("training words never cover the inventory".into()));
    }
    let inventory = spec.inventory();
    let mut corpus = SyntheticCorpus {
        spec: spec.clone(),
        words: words.iter().enumerate().map(|(i, w)| (w.clone(), i >= unseen)).collect(),
        inventory,
        records: Vec::new(),
        clips: Vec::new(),
        word_of: Vec::new(),
    };
    for (wi, w) in words.iter().enumerate() {
        let ipa = serialize(&corpus.phonemes(w).symbols);
        for c in 0..spec.clips_per_word {
            let split = if wi < unseen {
                Split::Test
            } else if c >= spec.clips_per_word - spec.heldout_clips {
                Split::Dev
            } else {
                Split::Train
            };
            let clip = render(spec, w, &voices[c % spec.speakers], &mut rng);
            corpus.records.push(ManifestRecord {
                audio: format!("audio/w{wi:04}_c{c:02}.wav"),
                ipa: ipa.clone(),
                lang: spec.lang.clone(),
                split,
                text: None,
                duration: Some(clip.duration_secs()),
            });
            corpus.clips.push(clip);
            corpus.word_of.push(wi);
        }
    }
    Ok(corpus)
}

/// Writes the clips as 16-bit WAV files under `dir` plus `manifest.jsonl`.
pub fn write_synthetic_corpus(dir: impl AsRef<Path>, corpus: &SyntheticCorpus) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("audio"))?;
    for (rec, clip) in corpus.records.iter().zip(&corpus.clips) {
        let path = dir.join(&rec.audio);
        write_wav(&path, clip).map_err(|source| match source {
            crate::audio::AudioError::Io(e) => CorpusError::from(e),
            source => CorpusError::Audio {
                path: path.display().to_string(),
                source,
            },
        })?;
    }
    write_manifest(dir.join("manifest.jsonl"), &corpus.records)
}
