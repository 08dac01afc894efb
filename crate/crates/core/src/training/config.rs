use std::collections::BTreeMap;
use std::path::Path;

use crate::encoders::EncoderConfig;

use super::{Result, TrainError};

/// Optimization and data settings for contrastive training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub preset: String,
    pub hidden_dim: Option<usize>,
    pub num_layers: Option<usize>,
    pub num_heads: Option<usize>,
    pub intermediate_dim: Option<usize>,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub clip_norm: f64,
    pub word_batch_size: usize,
    pub utterance_batch_size: usize,
    /// Per-source overrides keyed by source name.
    pub source_batch_sizes: BTreeMap<String, usize>,
    pub weight_decay: f64,
    pub seed: u64,
    pub hard_negatives: bool,
    pub corruption_rate: f64,
    pub spec_augment: bool,
    /// Checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Accepted for compatibility; arithmetic is always 64-bit.
    pub mixed_precision: String,
    /// Accepted for compatibility; has no effect.
    pub gradient_checkpointing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            preset: "tiny".into(),
            hidden_dim: None,
            num_layers: None,
            num_heads: None,
            intermediate_dim: None,
            peak_lr: 1e-4,
            warmup_steps: 500,
            total_steps: 100_000,
            clip_norm: 10.0,
            word_batch_size: 256,
            utterance_batch_size: 32,
            source_batch_sizes: BTreeMap::new(),
            weight_decay: 0.01,
            seed: 0,
            hard_negatives: true,
            corruption_rate: 0.10,
            spec_augment: true,
            checkpoint_every: 0,
            mixed_precision: "no".into(),
            gradient_checkpointing: false,
        }
    }
}

fn bad(line: usize, msg: impl Into<String>) -> TrainError {
    TrainError::Config { line, msg: msg.into() }
}

/// Integer with an optional `k` (thousands) suffix, as in "100k".
fn parse_count(line: usize, v: &str) -> Result<usize> {
    let lower = v.to_ascii_lowercase();
    let (digits, mult) = match lower.strip_suffix('k') {
        Some(d) => (d, 1000),
        None => (lower.as_str(), 1),
    };
    digits
        .trim()
        .parse::<usize>()
        .map(|n| n * mult)
        .map_err(|_| bad(line, format!("expected a count, got {v:?}")))
}

fn parse_f64(line: usize, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| bad(line, format!("expected a number, got {v:?}")))
}

fn parse_bool(line: usize, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(bad(line, format!("expected true or false, got {v:?}"))),
    }
}

impl TrainConfig {
    /// CPU-scale defaults: desk encoder, 2000 steps, batch 16.
    pub fn desk() -> Self {
        TrainConfig {
            preset: "desk".into(),
            peak_lr: 1e-3,
            warmup_steps: 100,
            total_steps: 2000,
            word_batch_size: 16,
            utterance_batch_size: 16,
            ..TrainConfig::default()
        }
    }

    /// Parses `key = value` lines over the defaults. Keys are matched
    /// case-insensitively and accept both snake_case names and the
    /// hyperparameter table's names ("Initial learning rate", "Warm-up
    /// steps", "MSWC-P batch size", ...). `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_over(TrainConfig::default(), text)
    }

    pub fn parse_over(mut cfg: TrainConfig, text: &str) -> Result<Self> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| bad(line, "expected key = value"))?;
            let (key, v) = (k.trim().to_ascii_lowercase(), v.trim());
            match key.as_str() {
                "preset" => cfg.preset = v.to_string(),
                "hidden dimensions" | "hidden_dim" => cfg.hidden_dim = Some(parse_count(line, v)?),
                "num. layers" | "num_layers" => cfg.num_layers = Some(parse_count(line, v)?),
                "num. att. heads" | "num_heads" => cfg.num_heads = Some(parse_count(line, v)?),
                "intermediate size" | "intermediate_dim" => cfg.intermediate_dim = Some(parse_count(line, v)?),
                "initial learning rate" | "peak_lr" | "learning_rate" => cfg.peak_lr = parse_f64(line, v)?,
                "scheduler" | "schedule" => {
                    if !v.to_ascii_lowercase().contains("cosine") {
                        return Err(bad(line, format!("only the cosine schedule is supported, got {v:?}")));
                    }
                }
                "warm-up steps" | "warmup_steps" => cfg.warmup_steps = parse_count(line, v)?,
                "total training steps" | "total_steps" => cfg.total_steps = parse_count(line, v)?,
                "max. gradient norm for gradient clipping" | "clip_norm" => cfg.clip_norm = parse_f64(line, v)?,
                "batch_size" => {
                    let n = parse_count(line, v)?;
                    cfg.word_batch_size = n;
                    cfg.utterance_batch_size = n;
                }
                "word_batch_size" => cfg.word_batch_size = parse_count(line, v)?,
                "utterance_batch_size" => cfg.utterance_batch_size = parse_count(line, v)?,
                "weight_decay" => cfg.weight_decay = parse_f64(line, v)?,
                "seed" => cfg.seed = parse_count(line, v)? as u64,
                "hard_negatives" => cfg.hard_negatives = parse_bool(line, v)?,
                "corruption_rate" => cfg.corruption_rate = parse_f64(line, v)?,
                "spec_augment" => cfg.spec_augment = parse_bool(line, v)?,
                "checkpoint_every" => cfg.checkpoint_every = parse_count(line, v)?,
                "mixed precision" | "mixed_precision" => cfg.mixed_precision = v.to_string(),
                "gradient checkpointing" | "gradient_checkpointing" => {
                    cfg.gradient_checkpointing = parse_bool(line, v)?
                }
                other => match other.strip_suffix(" batch size") {
                    Some(source) if !source.is_empty() => {
                        cfg.source_batch_sizes.insert(source.to_string(), parse_count(line, v)?);
                    }
                    _ => return Err(bad(line, format!("unknown key {:?}", k.trim()))),
                },
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps >= self.total_steps {
            return Err(bad(0, format!("warm-up ({}) must be shorter than training ({})", self.warmup_steps, self.total_steps)));
        }
        let sizes = [self.word_batch_size, self.utterance_batch_size];
        if sizes.iter().chain(self.source_batch_sizes.values()).any(|&b| b < 2) {
            return Err(bad(0, "batch sizes must be at least 2"));
        }
        if !(self.peak_lr > 0.0 && self.clip_norm > 0.0 && self.weight_decay >= 0.0) {
            return Err(bad(0, "learning rate and clip norm must be positive, weight decay non-negative"));
        }
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return Err(bad(0, "corruption rate must lie in [0, 1]"));
        }
        self.encoder_config()?;
        Ok(())
    }

    /// The preset with any explicit shape overrides applied.
    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        let mut c = EncoderConfig::preset(&self.preset)?;
        c.hidden_dim = self.hidden_dim.unwrap_or(c.hidden_dim);
        c.num_layers = self.num_layers.unwrap_or(c.num_layers);
        c.num_heads = self.num_heads.unwrap_or(c.num_heads);
        c.intermediate_dim = self.intermediate_dim.unwrap_or(c.intermediate_dim);
        c.validate()?;
        Ok(c)
    }
}

/// Linear warm-up from 0 to the peak, then cosine decay to 0 at `total_steps`.
pub fn lr_schedule(step: usize, cfg: &TrainConfig) -> f64 {
    let (w, t) = (cfg.warmup_steps, cfg.total_steps);
    if step < w {
        return cfg.peak_lr * step as f64 / w as f64;
    }
    let progress = (step.min(t) - w) as f64 / (t - w) as f64;
    cfg.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule_cfg(total: usize) -> TrainConfig {
        TrainConfig {
            total_steps: total,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_points() {
        let c = schedule_cfg(1500);
        assert_eq!(lr_schedule(0, &c), 0.0);
        assert!((lr_schedule(250, &c) - 5e-5).abs() < 1e-18);
        assert!((lr_schedule(500, &c) - 1e-4).abs() < 1e-18);
        assert!((lr_schedule(1000, &c) - 5e-5).abs() < 1e-12);
        assert!(lr_schedule(1500, &c).abs() < 1e-18);
    }

    #[test]
    fn schedule_is_monotone_after_warmup() {
        let c = schedule_cfg(3000);
        let lrs: Vec<f64> = (0..=3000).map(|s| lr_schedule(s, &c)).collect();
        assert!(lrs[..=500].windows(2).all(|w| w[0] < w[1]));
        assert!(lrs[500..].windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn table_names_are_accepted() {
        let text = "\
# hyperparameters
Initial learning rate = 1e-4
Scheduler = Cosine Scheduler
Warm-up steps = 500
Total training steps = 100k
FLEURS-P batch size = 32
MSWC-P batch size = 256
DoReCo-P batch size = 32
Gradient checkpointing = True
Mixed Precision = float16
Max. Gradient Norm for Gradient Clipping = 10
Hidden dimensions = 384
Num. Layers = 4
Num. Att. Heads = 6
Intermediate size = 1536
";
        let c = TrainConfig::parse(text).unwrap();
        assert_eq!(c.total_steps, 100_000);
        assert_eq!(c.source_batch_sizes["mswc-p"], 256);
        assert_eq!(c.source_batch_sizes["fleurs-p"], 32);
        assert_eq!(c.clip_norm, 10.0);
        assert!(c.gradient_checkpointing);
        let e = c.encoder_config().unwrap();
        assert_eq!((e.hidden_dim, e.num_layers, e.num_heads, e.intermediate_dim), (384, 4, 6, 1536));
    }

    #[test]
    fn invalid_configs() {
        assert!(matches!(TrainConfig::parse("bogus = 1"), Err(TrainError::Config { line: 1, .. })));
        assert!(matches!(TrainConfig::parse("\nwarmup_steps = x"), Err(TrainError::Config { line: 2, .. })));
        assert!(TrainConfig::parse("total_steps = 400").is_err());
        assert!(TrainConfig::parse("batch_size = 1").is_err());
        assert!(TrainConfig::parse("scheduler = linear").is_err());
        assert!(TrainConfig::desk().validate().is_ok());
    }
}
