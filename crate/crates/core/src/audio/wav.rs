use std::path::Path;

use super::{AudioClip, AudioError, SAMPLE_RATE};

fn map_hound(e: hound::Error) -> AudioError {
    match e {
        hound::Error::IoError(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            AudioError::CorruptHeader("unexpected end of file".into())
        }
        hound::Error::IoError(e) => AudioError::Io(e),
        hound::Error::FormatError(m) => AudioError::CorruptHeader(m.to_string()),
        hound::Error::Unsupported => AudioError::UnsupportedCodec("unsupported WAV variant".into()),
        other => AudioError::CorruptHeader(other.to_string()),
    }
}

/// Reads a PCM-16 WAV file, averages channels and resamples to 16 kHz.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let mut reader = hound::WavReader::open(path).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedCodec(format!(
            "{:?} {}-bit",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let channels = usize::from(spec.channels.max(1));
    let raw: Vec<i16> = reader
        .samples::<i16>()
        .collect::<Result<_, _>>()
        .map_err(map_hound)?;
    let mono: Vec<f32> = raw
        .chunks_exact(channels)
        .map(|frame| {
            let sum: f32 = frame.iter().map(|&s| f32::from(s) / 32768.0).sum();
            sum / channels as f32
        })
        .collect();
    let clip = AudioClip::new(mono, spec.sample_rate)?;
    Ok(resample_linear(&clip, SAMPLE_RATE))
}

/// Writes mono PCM-16 at the clip's sample rate; samples are clipped to [-1, 1].
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(map_hound)?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(map_hound)?;
    }
    writer.finalize().map_err(map_hound)
}

/// Linear-interpolation resampler; output length is round(N · target / source).
pub fn resample_linear(clip: &AudioClip, target: u32) -> AudioClip {
    if clip.sample_rate == target {
        return clip.clone();
    }
    let n = clip.samples.len();
    let ratio = f64::from(clip.sample_rate) / f64::from(target);
    let out_len = ((n as f64) / ratio).round().max(1.0) as usize;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = pos.floor() as usize;
            let frac = pos - j as f64;
            let a = f64::from(clip.samples[j.min(n - 1)]);
            let b = f64::from(clip.samples[(j + 1).min(n - 1)]);
            (a + (b - a) * frac) as f32
        })
        .collect();
    AudioClip {
        samples,
        sample_rate: target,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn write_raw(path: &Path, rate: u32, channels: u16, frames: &[Vec<i16>]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for f in frames {
            for &s in f {
                w.write_sample(s).unwrap();
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn passthrough_at_16k() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let frames: Vec<Vec<i16>> = (0..16000).map(|i| vec![(i % 200) as i16 * 100]).collect();
        write_raw(&p, 16000, 1, &frames);
        let clip = load_wav(&p).unwrap();
        assert_eq!(clip.samples.len(), 16000);
        assert_eq!(clip.sample_rate, 16000);
        assert_eq!(clip.samples[3], 300.0 / 32768.0);
    }

    #[test]
    fn opposite_channels_cancel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let frames: Vec<Vec<i16>> = (0..1000).map(|i| vec![i as i16, -(i as i16)]).collect();
        write_raw(&p, 16000, 2, &frames);
        let clip = load_wav(&p).unwrap();
        assert_eq!(clip.samples.len(), 1000);
        assert!(clip.samples.iter().all(|&s| s == 0.0));
    }

    /// Dominant frequency by exhaustive DFT magnitude search on a 1 Hz grid.
    fn dominant_hz(samples: &[f32], rate: f64, lo: usize, hi: usize) -> f64 {
        let mut best = (0.0, 0.0);
        for f in lo..=hi {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &s) in samples.iter().enumerate() {
                let ph = 2.0 * PI * f as f64 * n as f64 / rate;
                re += f64::from(s) * ph.cos();
                im += f64::from(s) * ph.sin();
            }
            let mag = re * re + im * im;
            if mag > best.1 {
                best = (f as f64, mag);
            }
        }
        best.0
    }

    #[test]
    fn upsampling_doubles_length_and_keeps_pitch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("8k.wav");
        let n = 4000;
        let frames: Vec<Vec<i16>> = (0..n)
            .map(|i| vec![(10000.0 * (2.0 * PI * 300.0 * i as f64 / 8000.0).sin()) as i16])
            .collect();
        write_raw(&p, 8000, 1, &frames);
        let clip = load_wav(&p).unwrap();
        assert!((clip.samples.len() as i64 - 2 * n as i64).abs() <= 1);
        let f = dominant_hz(&clip.samples, 16000.0, 250, 350);
        assert!((f - 300.0).abs() / 300.0 < 0.01, "{f}");
    }

    #[test]
    fn rejects_non_pcm16() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(0.5f32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&p), Err(AudioError::UnsupportedCodec(_))));

        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, b"RIFX not really a wave file").unwrap();
        assert!(matches!(load_wav(&junk), Err(AudioError::CorruptHeader(_))));
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.wav");
        let clip = AudioClip::new(vec![0.0, 0.5, -0.5, 1.0], 16000).unwrap();
        write_wav(&p, &clip).unwrap();
        let back = load_wav(&p).unwrap();
        for (a, b) in clip.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
