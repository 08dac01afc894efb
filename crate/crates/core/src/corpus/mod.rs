//! Manifests of paired audio and transcriptions, frequency filtering, and a
//! synthetic tonal corpus for desk-scale experiments.

mod filter;
mod synth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{load_wav, AudioClip, AudioError};
use crate::ipa::{normalize_ipa_with_lang, IpaError, LanguageTag, PhonemeSequence};

pub use filter::filter_manifest;
pub use synth::{generate_synthetic_corpus, render_word, write_synthetic_corpus, SyntheticCorpus, SyntheticSpec, SYNTH_SYMBOLS};

pub const DATA_ROOT_VAR: &str = "PHONOKWS_DATA_ROOT";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest line {line}: {msg}")]
    BadRecord { line: usize, msg: String },
    #[error("manifest has no records")]
    ManifestEmpty,
    #[error("inventory of {0} symbols exceeds the limit of 64")]
    InventoryTooLarge(usize),
    #[error("synthetic spec: {0}")]
    BadSpec(String),
    #[error("disk full")]
    DiskFull,
    #[error("audio {path}: {source}")]
    Audio { path: String, source: AudioError },
    #[error(transparent)]
    Ipa(#[from] IpaError),
    #[error(transparent)]
    Io(std::io::Error),
}

impl From<std::io::Error> for CorpusError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::StorageFull {
            CorpusError::DiskFull
        } else {
            CorpusError::Io(e)
        }
    }
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One line of a manifest: an audio file and its transcription.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub audio: String,
    pub ipa: String,
    pub lang: LanguageTag,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
}

impl ManifestRecord {
    pub fn phonemes(&self) -> Result<PhonemeSequence> {
        Ok(normalize_ipa_with_lang(&self.ipa, self.lang.clone())?)
    }
}

/// Records plus the directory their audio paths are relative to.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    /// Directory audio paths resolve against: `PHONOKWS_DATA_ROOT` if set,
    /// else the manifest's own directory.
    pub fn default_root(manifest_path: &Path) -> PathBuf {
        match std::env::var_os(DATA_ROOT_VAR) {
            Some(r) if !r.is_empty() => PathBuf::from(r),
            _ => manifest_path.parent().map(Path::to_path_buf).unwrap_or_default(),
        }
    }

    /// Parses every line; the first malformed record is an error.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut records = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec = parse_record(line).map_err(|msg| CorpusError::BadRecord { line: idx + 1, msg })?;
            records.push(rec);
        }
        Ok(Manifest {
            root: Self::default_root(path),
            records,
        })
    }

    pub fn audio_path(&self, rec: &ManifestRecord) -> PathBuf {
        self.root.join(&rec.audio)
    }

    pub fn load_audio(&self, rec: &ManifestRecord) -> Result<AudioClip> {
        let path = self.audio_path(rec);
        load_wav(&path).map_err(|source| CorpusError::Audio {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

fn parse_record(line: &str) -> std::result::Result<ManifestRecord, String> {
    let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    normalize_ipa_with_lang(&rec.ipa, rec.lang.clone()).map_err(|e| format!("ipa {:?}: {e}", rec.ipa))?;
    if let Some(d) = rec.duration {
        if !(d.is_finite() && d >= 0.0) {
            return Err(format!("duration {d} is not a non-negative number"));
        }
    }
    if rec.audio.is_empty() {
        return Err("empty audio path".into());
    }
    Ok(rec)
}

/// One JSON object per line, written atomically.
pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(std::io::Error::other)?;
        buf.push(b'\n');
    }
    write_atomic(path.as_ref(), &buf)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(crate::binio::write_atomic(path, bytes)?)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LangTotals {
    pub records: usize,
    pub duration: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub accepted: usize,
    pub errors: Vec<(usize, String)>,
    pub per_lang: BTreeMap<String, LangTotals>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Checks every record: JSON structure and field names, split, a
/// transcription that normalizes, a non-negative duration and, when
/// `check_audio` is set, that the audio file exists under the root.
pub fn validate_manifest(path: impl AsRef<Path>, check_audio: bool) -> Result<ValidationReport> {
    let path = path.as_ref();
    let root = Manifest::default_root(path);
    let text = std::fs::read_to_string(path)?;
    let mut report = ValidationReport::default();
    for (idx, line) in text.lines().enumerate() {
        let n = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(line) {
            Ok(rec) if check_audio && !root.join(&rec.audio).is_file() => {
                report.errors.push((n, format!("audio file {} not found", root.join(&rec.audio).display())));
            }
            Ok(rec) => {
                report.accepted += 1;
                let t = report.per_lang.entry(rec.lang.to_string()).or_default();
                t.records += 1;
                t.duration += rec.duration.unwrap_or(0.0);
            }
            Err(msg) => report.errors.push((n, msg)),
        }
    }
    Ok(report)
}
