use std::sync::{Arc, OnceLock};

use rustfft::{num_complex::Complex, Fft, FftPlanner};

use super::{AudioClip, AudioError, SAMPLE_RATE};

pub const N_FFT: usize = 400;
pub const HOP: usize = 160;
pub const N_MELS: usize = 80;
const N_BINS: usize = N_FFT / 2 + 1;

/// T × 80 normalized log-mel frames with a validity mask (padding is a suffix).
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    data: Vec<f32>,
    mask: Vec<bool>,
}

impl MelSpectrogram {
    pub fn from_frames(data: Vec<f32>, mask: Vec<bool>) -> Self {
        assert_eq!(data.len(), mask.len() * N_MELS, "frame data does not match the mask");
        MelSpectrogram { data, mask }
    }

    pub fn n_frames(&self) -> usize {
        self.mask.len()
    }

    pub fn valid_frames(&self) -> usize {
        self.mask.iter().take_while(|&&m| m).count()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * N_MELS..(t + 1) * N_MELS]
    }

    /// Appends zero frames with mask 0 up to `frames`.
    pub fn padded(&self, frames: usize) -> MelSpectrogram {
        let mut out = self.clone();
        if frames > out.mask.len() {
            out.data.resize(frames * N_MELS, 0.0);
            out.mask.resize(frames, false);
        }
        out
    }
}

fn fft() -> &'static Arc<dyn Fft<f64>> {
    static FFT: OnceLock<Arc<dyn Fft<f64>>> = OnceLock::new();
    FFT.get_or_init(|| FftPlanner::new().plan_fft_forward(N_FFT))
}

fn hann() -> &'static [f64; N_FFT] {
    static W: OnceLock<[f64; N_FFT]> = OnceLock::new();
    W.get_or_init(|| {
        let mut w = [0.0; N_FFT];
        for (n, v) in w.iter_mut().enumerate() {
            *v = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / N_FFT as f64).cos();
        }
        w
    })
}

pub(crate) fn hz_to_mel(f: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if f >= MIN_LOG_HZ {
        min_log_mel + (f / MIN_LOG_HZ).ln() / logstep
    } else {
        f / F_SP
    }
}

pub(crate) fn mel_to_hz(m: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if m >= min_log_mel {
        MIN_LOG_HZ * (logstep * (m - min_log_mel)).exp()
    } else {
        F_SP * m
    }
}

/// 80 triangular filters on the Slaney mel scale over 0–8 kHz, area-normalized.
/// Row-major `[N_MELS][N_BINS]`.
pub fn mel_filterbank() -> &'static [f64] {
    static FB: OnceLock<Vec<f64>> = OnceLock::new();
    FB.get_or_init(|| {
        let fmax = f64::from(SAMPLE_RATE) / 2.0;
        let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(fmax));
        let pts: Vec<f64> = (0..N_MELS + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (N_MELS + 1) as f64))
            .collect();
        let mut fb = vec![0.0; N_MELS * N_BINS];
        for m in 0..N_MELS {
            let (l, c, r) = (pts[m], pts[m + 1], pts[m + 2]);
            let norm = 2.0 / (r - l);
            for k in 0..N_BINS {
                let f = k as f64 * f64::from(SAMPLE_RATE) / N_FFT as f64;
                let w = ((f - l) / (c - l)).min((r - f) / (r - c)).max(0.0);
                fb[m * N_BINS + k] = w * norm;
            }
        }
        fb
    })
}

/// Normalized log-mel features: centered STFT (reflect padding, periodic
/// Hann, 400/160), power spectrum, mel projection, log10 with a 1e-10 floor,
/// clamp to max − 8, then (x + 4) / 4. A clip of N samples gives ⌊N/160⌋ frames.
pub fn log_mel(clip: &AudioClip) -> Result<MelSpectrogram, AudioError> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(AudioError::BadSampleRate(clip.sample_rate));
    }
    let n = clip.samples.len();
    if n < N_FFT {
        return Err(AudioError::ClipTooShort {
            samples: n,
            window: N_FFT,
        });
    }
    let pad = N_FFT / 2;
    let x: Vec<f64> = clip.samples.iter().map(|&s| f64::from(s)).collect();
    let padded: Vec<f64> = (0..n + 2 * pad)
        .map(|i| {
            let j = i as isize - pad as isize;
            let j = if j < 0 {
                -j
            } else if j >= n as isize {
                2 * (n as isize - 1) - j
            } else {
                j
            };
            x[j as usize]
        })
        .collect();
    let frames = n / HOP;
    let window = hann();
    let fb = mel_filterbank();
    let fft = fft();
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut power = [0.0f64; N_BINS];
    let mut logmel = vec![0.0f64; frames * N_MELS];
    for t in 0..frames {
        let start = t * HOP;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(padded[start + i] * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (p, b) in power.iter_mut().zip(&buf) {
            *p = b.norm_sqr();
        }
        for m in 0..N_MELS {
            let row = &fb[m * N_BINS..(m + 1) * N_BINS];
            let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
            logmel[t * N_MELS + m] = e.max(1e-10).log10();
        }
    }
    let max = logmel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let data = logmel
        .into_iter()
        .map(|v| ((v.max(max - 8.0) + 4.0) / 4.0) as f32)
        .collect();
    Ok(MelSpectrogram {
        data,
        mask: vec![true; frames],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, n: usize) -> AudioClip {
        let s = (0..n)
            .map(|i| (0.5 * (2.0 * PI * freq * i as f64 / 16000.0).sin()) as f32)
            .collect();
        AudioClip::new(s, 16000).unwrap()
    }

    #[test]
    fn one_second_gives_100_frames() {
        let mel = log_mel(&sine(440.0, 16000)).unwrap();
        assert_eq!(mel.n_frames(), 100);
        assert_eq!(mel.data().len(), 100 * 80);
        assert!(mel.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn frame_count_is_samples_over_hop() {
        for n in [400, 401, 559, 560, 1000, 16001] {
            assert_eq!(log_mel(&sine(300.0, n)).unwrap().n_frames(), n / HOP, "{n}");
        }
        assert!(matches!(
            log_mel(&sine(300.0, 399)),
            Err(AudioError::ClipTooShort { samples: 399, .. })
        ));
    }

    #[test]
    fn silence_maps_to_constant() {
        let clip = AudioClip::new(vec![0.0; 16000], 16000).unwrap();
        let mel = log_mel(&clip).unwrap();
        // log10(1e-10) = -10; clamp is a no-op; (-10 + 4) / 4.
        assert!(mel.data().iter().all(|&v| v == -1.5));
    }

    /// Independent construction: for each filter, its triangle evaluated at
    /// exactly 440 Hz (which is FFT bin 11 at 40 Hz spacing).
    fn oracle_bin_for(freq: f64) -> usize {
        let mel = |f: f64| {
            if f < 1000.0 {
                3.0 * f / 200.0
            } else {
                15.0 + 27.0 * (f / 1000.0).ln() / 6.4f64.ln()
            }
        };
        let inv = |m: f64| {
            if m < 15.0 {
                200.0 * m / 3.0
            } else {
                1000.0 * (6.4f64.ln() * (m - 15.0) / 27.0).exp()
            }
        };
        let top = mel(8000.0);
        let edges: Vec<f64> = (0..82).map(|i| inv(top * i as f64 / 81.0)).collect();
        (0..80)
            .map(|m| {
                let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
                let tri = ((freq - l) / (c - l)).min((r - freq) / (r - c)).max(0.0);
                (m, tri * 2.0 / (r - l))
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
    }

    #[test]
    fn sine_peaks_in_its_filter() {
        let expected = oracle_bin_for(440.0);
        // Cosine phase so the reflected edge frames stay a clean tone.
        let s = (0..16000)
            .map(|i| (0.5 * (2.0 * PI * 440.0 * i as f64 / 16000.0).cos()) as f32)
            .collect();
        let mel = log_mel(&AudioClip::new(s, 16000).unwrap()).unwrap();
        for t in 0..mel.n_frames() {
            let f = mel.frame(t);
            let argmax = (0..80).max_by(|&a, &b| f[a].total_cmp(&f[b])).unwrap();
            assert_eq!(argmax, expected, "frame {t}");
        }
    }

    #[test]
    fn filterbank_shape() {
        let fb = mel_filterbank();
        assert_eq!(fb.len(), 80 * 201);
        for m in 0..80 {
            assert!(fb[m * 201..(m + 1) * 201].iter().any(|&w| w > 0.0), "empty filter {m}");
        }
    }

    #[test]
    fn prepending_one_hop_shifts_frames() {
        let base: Vec<f32> = (0..8000)
            .map(|i| {
                let t = i as f64 / 16000.0;
                (0.3 * (2.0 * PI * 523.0 * t).sin() + 0.2 * (2.0 * PI * 1800.0 * t).sin() * (7.0 * t).cos())
                    as f32
            })
            .collect();
        let mut shifted = vec![0.0; HOP];
        shifted.extend_from_slice(&base);
        let a = log_mel(&AudioClip::new(base, 16000).unwrap()).unwrap();
        let b = log_mel(&AudioClip::new(shifted, 16000).unwrap()).unwrap();
        assert_eq!(b.n_frames(), a.n_frames() + 1);
        for t in 3..a.n_frames() - 3 {
            for (x, y) in a.frame(t).iter().zip(b.frame(t + 1)) {
                assert!((x - y).abs() < 1e-6, "frame {t}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn padding_appends_masked_frames() {
        let mel = log_mel(&sine(440.0, 1600)).unwrap().padded(15);
        assert_eq!(mel.n_frames(), 15);
        assert_eq!(mel.valid_frames(), 10);
        assert!(mel.frame(12).iter().all(|&v| v == 0.0));
    }
}
