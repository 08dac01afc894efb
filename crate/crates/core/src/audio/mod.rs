//! Audio ingestion, log-mel features and SpecAugment.

mod mel;
mod specaug;
mod wav;

use thiserror::Error;

pub use mel::{log_mel, mel_filterbank, MelSpectrogram, HOP, N_FFT, N_MELS};
pub(crate) use mel::{hz_to_mel, mel_to_hz};
pub use specaug::{spec_augment, SpecAugmentConfig};
pub use wav::{load_wav, resample_linear, write_wav};

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unsupported audio encoding: {0}")]
    UnsupportedCodec(String),
    #[error("corrupt WAV header: {0}")]
    CorruptHeader(String),
    #[error("clip has {samples} samples, fewer than one {window}-sample window")]
    ClipTooShort { samples: usize, window: usize },
    #[error("audio contains no samples")]
    Empty,
    #[error("sample rate {0} Hz is not supported")]
    BadSampleRate(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if samples.is_empty() {
            return Err(AudioError::Empty);
        }
        if sample_rate == 0 {
            return Err(AudioError::BadSampleRate(sample_rate));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Zero-pads or truncates to exactly `len` samples.
    pub fn fit_to(&self, len: usize) -> AudioClip {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        AudioClip {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    /// Word-level clips are featurized as exactly one second.
    pub fn fit_to_one_second(&self) -> AudioClip {
        self.fit_to(self.sample_rate as usize)
    }
}
