//! Speech and phoneme transformer encoders sharing one hidden size.

mod blocks;
mod mlm;
mod phoneme;
mod speech;

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, NumericsError, ParamId, ParamStore, Tensor};

pub use blocks::self_attention_pool;
pub use mlm::{mask_tokens, mlm_loss, mlm_step, MlmLabels, MLM_MASK_PROB};
pub use phoneme::sinusoids;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("sequence of {len} exceeds the maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("input has no valid positions")]
    AllMasked,
    #[error("no position was selected for masking")]
    NoMaskedPositions,
    #[error("bad encoder config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, EncoderError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub preset: String,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub intermediate_dim: usize,
    /// Longest sequence after the speech stem, and longest token sequence.
    pub max_positions: usize,
}

impl EncoderConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (hidden_dim, num_layers, num_heads, intermediate_dim, max_positions) = match name {
            "tiny" => (384, 4, 6, 1536, 1500),
            "base" => (512, 6, 8, 2048, 1500),
            "small" => (768, 12, 12, 3072, 1500),
            "desk" => (64, 2, 4, 256, 256),
            other => return Err(EncoderError::BadConfig(format!("unknown preset {other:?}"))),
        };
        Ok(EncoderConfig {
            preset: name.to_string(),
            hidden_dim,
            num_layers,
            num_heads,
            intermediate_dim,
            max_positions,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.num_heads == 0 || !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(EncoderError::BadConfig(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if !self.hidden_dim.is_multiple_of(2) || self.hidden_dim < 4 {
            return Err(EncoderError::BadConfig("hidden_dim must be even and at least 4".into()));
        }
        if self.num_layers == 0 || self.intermediate_dim == 0 || self.max_positions == 0 {
            return Err(EncoderError::BadConfig("sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Speech,
    Phoneme,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Speech => "speech",
            Modality::Phoneme => "phoneme",
        }
    }
}

/// A pooled encoder output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub id: String,
    pub modality: Modality,
    pub vector: Vec<f64>,
}

pub(crate) struct LayerIds {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

pub(crate) struct SpeechIds {
    pub conv1_w: ParamId,
    pub conv1_b: ParamId,
    pub conv2_w: ParamId,
    pub conv2_b: ParamId,
    pub layers: Vec<LayerIds>,
    pub ln_post_g: ParamId,
    pub ln_post_b: ParamId,
    pub pool_query: ParamId,
}

pub(crate) struct PhonemeIds {
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub emb_ln_g: ParamId,
    pub emb_ln_b: ParamId,
    pub layers: Vec<LayerIds>,
    pub mlm_dense_w: ParamId,
    pub mlm_dense_b: ParamId,
    pub mlm_ln_g: ParamId,
    pub mlm_ln_b: ParamId,
    pub mlm_bias: ParamId,
}

/// Both encoders plus the two learnable loss scalars, in one parameter store.
pub struct DualEncoderModel {
    pub cfg: EncoderConfig,
    pub vocab_size: usize,
    pub store: ParamStore,
    pub(crate) speech: SpeechIds,
    pub(crate) phoneme: PhonemeIds,
    pub t_log: ParamId,
    pub bias: ParamId,
}

const INIT_STD: f64 = 0.02;

struct Builder<'a, R: Rng> {
    store: ParamStore,
    rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn normal(&mut self, name: String, shape: &[usize]) -> ParamId {
        let t = Tensor::randn(shape, INIT_STD, self.rng);
        self.store.add(name, t).expect("unique parameter names")
    }

    fn fill(&mut self, name: String, shape: &[usize], v: f64) -> ParamId {
        self.store.add(name, Tensor::filled(shape, v)).expect("unique parameter names")
    }

    fn layer(&mut self, prefix: &str, d: usize, ff: usize) -> LayerIds {
        LayerIds {
            ln1_g: self.fill(format!("{prefix}.ln1.g"), &[d], 1.0),
            ln1_b: self.fill(format!("{prefix}.ln1.b"), &[d], 0.0),
            wq: self.normal(format!("{prefix}.attn.wq"), &[d, d]),
            bq: self.fill(format!("{prefix}.attn.bq"), &[d], 0.0),
            wk: self.normal(format!("{prefix}.attn.wk"), &[d, d]),
            wv: self.normal(format!("{prefix}.attn.wv"), &[d, d]),
            bv: self.fill(format!("{prefix}.attn.bv"), &[d], 0.0),
            wo: self.normal(format!("{prefix}.attn.wo"), &[d, d]),
            bo: self.fill(format!("{prefix}.attn.bo"), &[d], 0.0),
            ln2_g: self.fill(format!("{prefix}.ln2.g"), &[d], 1.0),
            ln2_b: self.fill(format!("{prefix}.ln2.b"), &[d], 0.0),
            w1: self.normal(format!("{prefix}.ffn.w1"), &[d, ff]),
            b1: self.fill(format!("{prefix}.ffn.b1"), &[ff], 0.0),
            w2: self.normal(format!("{prefix}.ffn.w2"), &[ff, d]),
            b2: self.fill(format!("{prefix}.ffn.b2"), &[d], 0.0),
        }
    }
}

impl DualEncoderModel {
    /// Fresh weights drawn from N(0, 0.02²); norms start at identity, except
    /// the masked-token head's output norm, whose zero gain makes the first
    /// predictions uniform. The loss scalars start at t_log = ln 10, b = −10.
    pub fn new<R: Rng>(cfg: EncoderConfig, vocab_size: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if vocab_size <= crate::tokenizer::NUM_SPECIALS as usize {
            return Err(EncoderError::BadConfig(format!("vocab size {vocab_size} is too small")));
        }
        let (d, ff) = (cfg.hidden_dim, cfg.intermediate_dim);
        let mel = crate::audio::N_MELS;
        let mut b = Builder {
            store: ParamStore::new(),
            rng,
        };
        let speech = SpeechIds {
            conv1_w: b.normal("speech.conv1.w".into(), &[d, 3 * mel]),
            conv1_b: b.fill("speech.conv1.b".into(), &[d], 0.0),
            conv2_w: b.normal("speech.conv2.w".into(), &[d, 3 * d]),
            conv2_b: b.fill("speech.conv2.b".into(), &[d], 0.0),
            layers: (0..cfg.num_layers)
                .map(|i| b.layer(&format!("speech.layer{i}"), d, ff))
                .collect(),
            ln_post_g: b.fill("speech.ln_post.g".into(), &[d], 1.0),
            ln_post_b: b.fill("speech.ln_post.b".into(), &[d], 0.0),
            pool_query: b.normal("speech.pool.query".into(), &[d]),
        };
        let phoneme = PhonemeIds {
            tok_emb: b.normal("phoneme.tok_emb".into(), &[vocab_size, d]),
            pos_emb: b.normal("phoneme.pos_emb".into(), &[cfg.max_positions, d]),
            emb_ln_g: b.fill("phoneme.emb_ln.g".into(), &[d], 1.0),
            emb_ln_b: b.fill("phoneme.emb_ln.b".into(), &[d], 0.0),
            layers: (0..cfg.num_layers)
                .map(|i| b.layer(&format!("phoneme.layer{i}"), d, ff))
                .collect(),
            mlm_dense_w: b.normal("phoneme.mlm.dense.w".into(), &[d, d]),
            mlm_dense_b: b.fill("phoneme.mlm.dense.b".into(), &[d], 0.0),
            mlm_ln_g: b.fill("phoneme.mlm.ln.g".into(), &[d], 0.0),
            mlm_ln_b: b.fill("phoneme.mlm.ln.b".into(), &[d], 0.0),
            mlm_bias: b.fill("phoneme.mlm.bias".into(), &[vocab_size], 0.0),
        };
        let t_log = b.store.add("loss.t_log", Tensor::new(vec![], vec![10f64.ln()])?)?;
        let bias = b.store.add("loss.bias", Tensor::new(vec![], vec![-10.0])?)?;
        Ok(DualEncoderModel {
            cfg,
            vocab_size,
            store: b.store,
            speech,
            phoneme,
            t_log,
            bias,
        })
    }

    /// (hidden_dim, num_layers, num_heads, intermediate_dim) as built for each encoder.
    pub fn encoder_shapes(&self) -> [(usize, usize, usize, usize); 2] {
        let shape = |layers: &[LayerIds]| {
            let w1 = self.store.get(layers[0].w1);
            (w1.shape[0], layers.len(), self.cfg.num_heads, w1.shape[1])
        };
        [shape(&self.speech.layers), shape(&self.phoneme.layers)]
    }

    pub fn config_header(&self) -> String {
        let c = &self.cfg;
        format!(
            "preset={}\nhidden_dim={}\nnum_layers={}\nnum_heads={}\nintermediate_dim={}\nmax_positions={}\nvocab_size={}\n",
            c.preset, c.hidden_dim, c.num_layers, c.num_heads, c.intermediate_dim, c.max_positions, self.vocab_size
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        numerics::save_checkpoint(path, &self.store, &self.config_header())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (store, header) = numerics::load_checkpoint(path)?;
        Self::from_parts(&header, store)
    }

    pub fn from_parts(header: &str, store: ParamStore) -> Result<Self> {
        let kv: BTreeMap<&str, &str> = header
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim(), v.trim()))
            .collect();
        let num = |k: &str| -> Result<usize> {
            kv.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| EncoderError::BadConfig(format!("missing or invalid {k}")))
        };
        let cfg = EncoderConfig {
            preset: kv.get("preset").unwrap_or(&"custom").to_string(),
            hidden_dim: num("hidden_dim")?,
            num_layers: num("num_layers")?,
            num_heads: num("num_heads")?,
            intermediate_dim: num("intermediate_dim")?,
            max_positions: num("max_positions")?,
        };
        let vocab_size = num("vocab_size")?;
        let mut model = DualEncoderModel::new(cfg, vocab_size, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        if model.store.len() != store.len() {
            return Err(EncoderError::BadConfig(format!(
                "checkpoint has {} parameters, config implies {}",
                store.len(),
                model.store.len()
            )));
        }
        model.store.assign_from(&store)?;
        Ok(model)
    }
}
