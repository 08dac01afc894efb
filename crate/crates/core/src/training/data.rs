use crate::audio::{log_mel, AudioClip, MelSpectrogram, HOP};
use crate::corpus::{Manifest, Split, SyntheticCorpus};

use super::{Result, SourceLevel, TrainItem};

/// Log-mel features of a clip: words are fitted to one second, utterances
/// are cut to at most `max_frames` frames.
pub fn featurize(clip: &AudioClip, level: SourceLevel, max_frames: usize) -> Result<MelSpectrogram> {
    let clip = match level {
        SourceLevel::Word => clip.fit_to_one_second(),
        SourceLevel::Utterance if clip.samples.len() > max_frames * HOP => clip.fit_to(max_frames * HOP),
        SourceLevel::Utterance => clip.clone(),
    };
    Ok(log_mel(&clip)?)
}

/// Loads and featurizes every record of `split`.
pub fn items_from_manifest(
    manifest: &Manifest,
    split: Split,
    level: SourceLevel,
    max_frames: usize,
) -> Result<Vec<TrainItem>> {
    manifest
        .split(split)
        .map(|rec| {
            let clip = manifest.load_audio(rec)?;
            Ok(TrainItem {
                id: rec.audio.clone(),
                mel: featurize(&clip, level, max_frames)?,
                phonemes: rec.phonemes()?,
            })
        })
        .collect()
}

/// Word-level items of one split of an in-memory synthetic corpus.
pub fn items_from_synthetic(corpus: &SyntheticCorpus, split: Split) -> Result<Vec<TrainItem>> {
    corpus
        .indices(split)
        .into_iter()
        .map(|i| {
            let rec = &corpus.records[i];
            Ok(TrainItem {
                id: rec.audio.clone(),
                mel: featurize(&corpus.clips[i], SourceLevel::Word, 100)?,
                phonemes: rec.phonemes()?,
            })
        })
        .collect()
}
