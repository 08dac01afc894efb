use rand::Rng;

use super::{MelSpectrogram, N_MELS};

#[derive(Debug, Clone, PartialEq)]
pub struct SpecAugmentConfig {
    pub time_mask_prob: f64,
    pub time_mask_span: usize,
    pub freq_mask_prob: f64,
    pub freq_mask_span: usize,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        SpecAugmentConfig {
            time_mask_prob: 0.05,
            time_mask_span: 10,
            freq_mask_prob: 0.05,
            freq_mask_span: 10,
        }
    }
}

impl SpecAugmentConfig {
    pub fn disabled() -> Self {
        SpecAugmentConfig {
            time_mask_prob: 0.0,
            freq_mask_prob: 0.0,
            ..Self::default()
        }
    }
}

/// Zeroes random time and frequency spans inside the valid frames.
///
/// One uniform draw per valid frame, in order, decides whether a time span
/// starts there; then one draw per mel bin decides frequency spans.
pub fn spec_augment<R: Rng + ?Sized>(mel: &MelSpectrogram, cfg: &SpecAugmentConfig, rng: &mut R) -> MelSpectrogram {
    let mut out = mel.clone();
    let valid = mel.valid_frames();
    let mut time = vec![false; valid];
    for t in 0..valid {
        if rng.gen::<f64>() < cfg.time_mask_prob {
            let end = (t + cfg.time_mask_span.max(1)).min(valid);
            time[t..end].iter_mut().for_each(|m| *m = true);
        }
    }
    let mut freq = [false; N_MELS];
    for f in 0..N_MELS {
        if rng.gen::<f64>() < cfg.freq_mask_prob {
            let end = (f + cfg.freq_mask_span.max(1)).min(N_MELS);
            freq[f..end].iter_mut().for_each(|m| *m = true);
        }
    }
    let data = out.data_mut();
    for (t, &tm) in time.iter().enumerate() {
        for (f, &fm) in freq.iter().enumerate() {
            if tm || fm {
                data[t * N_MELS + f] = 0.0;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp(valid: usize, total: usize) -> MelSpectrogram {
        let data = (0..valid * N_MELS).map(|i| 1.0 + i as f32).collect();
        MelSpectrogram::from_frames(data, vec![true; valid]).padded(total)
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let mel = ramp(30, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(spec_augment(&mel, &SpecAugmentConfig::disabled(), &mut rng), mel);
    }

    #[test]
    fn replayed_stream_predicts_masks() {
        let mel = ramp(50, 60);
        let cfg = SpecAugmentConfig {
            time_mask_prob: 0.1,
            time_mask_span: 10,
            freq_mask_prob: 0.1,
            freq_mask_span: 10,
        };
        let out = spec_augment(&mel, &cfg, &mut ChaCha8Rng::seed_from_u64(9));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t_starts: Vec<usize> = (0..50).filter(|_| rng.gen::<f64>() < 0.1).collect();
        let f_starts: Vec<usize> = (0..80).filter(|_| rng.gen::<f64>() < 0.1).collect();
        for t in 0..60 {
            for f in 0..80 {
                let hit = t < 50
                    && (t_starts.iter().any(|&s| t >= s && t < s + 10)
                        || f_starts.iter().any(|&s| f >= s && f < s + 10));
                let v = out.frame(t)[f];
                if hit {
                    assert_eq!(v, 0.0, "({t},{f}) should be masked");
                } else {
                    assert_eq!(v, mel.frame(t)[f], "({t},{f}) should be intact");
                }
            }
        }
    }

    #[test]
    fn probability_one_masks_all_valid_frames() {
        let mel = ramp(20, 25);
        let cfg = SpecAugmentConfig {
            time_mask_prob: 1.0,
            time_mask_span: 10,
            freq_mask_prob: 0.0,
            freq_mask_span: 10,
        };
        let out = spec_augment(&mel, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(out.data()[..20 * N_MELS].iter().all(|&v| v == 0.0));
        assert_eq!(out.mask(), mel.mask());
    }

    proptest! {
        #[test]
        fn padding_is_never_touched(valid in 1usize..40, extra in 0usize..10, seed: u64,
                                    tp in 0.0f64..1.0, fp in 0.0f64..1.0, ts in 1usize..15, fs in 1usize..15) {
            let mel = ramp(valid, valid + extra);
            let cfg = SpecAugmentConfig { time_mask_prob: tp, time_mask_span: ts, freq_mask_prob: fp, freq_mask_span: fs };
            let out = spec_augment(&mel, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(&out.data()[valid * N_MELS..], &mel.data()[valid * N_MELS..]);
            prop_assert!(out.data().iter().all(|v| v.is_finite()));
            let again = spec_augment(&mel, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(out, again);
        }
    }
}
