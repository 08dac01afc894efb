//! Masked-token pretraining for the phoneme encoder.

use rand::Rng;

use crate::numerics::{clip_global_norm, AdamW, Graph, Var};
use crate::tokenizer::{TokenSequence, MASK, NUM_SPECIALS};

use super::blocks::linear;
use super::{DualEncoderModel, EncoderError, Result};

pub const MLM_MASK_PROB: f64 = 0.30;

/// Original id at each selected position, `None` elsewhere.
pub type MlmLabels = Vec<Option<u32>>;

/// Selects each valid non-special token with probability `prob`. Selected
/// tokens become MASK (80%), a uniformly random non-special id (10%), or stay
/// unchanged (10%).
pub fn mask_tokens<R: Rng + ?Sized>(
    tokens: &TokenSequence,
    prob: f64,
    vocab_size: usize,
    rng: &mut R,
) -> (TokenSequence, MlmLabels) {
    let mut out = tokens.clone();
    let mut labels = vec![None; tokens.len()];
    #[allow(clippy::needless_range_loop)]
    for i in 0..tokens.valid_len() {
        let id = tokens.ids[i];
        if id < NUM_SPECIALS || rng.gen::<f64>() >= prob {
            continue;
        }
        labels[i] = Some(id);
        let r = rng.gen::<f64>();
        if r < 0.8 {
            out.ids[i] = MASK;
        } else if r < 0.9 {
            out.ids[i] = rng.gen_range(NUM_SPECIALS..vocab_size as u32);
        }
    }
    (out, labels)
}

impl DualEncoderModel {
    /// Vocabulary logits for the given rows of hidden states. The output
    /// projection reuses the token embedding matrix.
    fn mlm_logits(&self, g: &mut Graph, states: Var) -> Result<Var> {
        let ids = &self.phoneme;
        let (w, b) = (g.param(ids.mlm_dense_w), g.param(ids.mlm_dense_b));
        let h = linear(g, states, w, Some(b))?;
        let h = g.gelu(h)?;
        let (lg, lb) = (g.param(ids.mlm_ln_g), g.param(ids.mlm_ln_b));
        let h = g.layer_norm(h, lg, lb)?;
        let emb = g.param(ids.tok_emb);
        let logits = g.matmul_nt(h, emb)?;
        let bias = g.param(ids.mlm_bias);
        Ok(g.add_row(logits, bias)?)
    }
}

/// Mean cross-entropy of the MLM head over selected positions only.
pub fn mlm_loss(model: &DualEncoderModel, g: &mut Graph, batch: &[(TokenSequence, MlmLabels)]) -> Result<Var> {
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (tokens, labels) in batch {
        let picked: Vec<usize> = labels.iter().enumerate().filter_map(|(i, l)| l.map(|_| i)).collect();
        if picked.is_empty() {
            continue;
        }
        let (h, _) = model.phoneme_states(g, tokens)?;
        rows.push(g.embedding(h, &picked)?);
        targets.extend(labels.iter().flatten().map(|&t| t as usize));
    }
    if rows.is_empty() {
        return Err(EncoderError::NoMaskedPositions);
    }
    let states = if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows)? };
    let logits = model.mlm_logits(g, states)?;
    Ok(g.cross_entropy(logits, &targets)?)
}

/// One optimizer step of masked-token prediction. Returns the loss before
/// the update, or `NoMaskedPositions` (parameters untouched) when the draw
/// selected nothing.
pub fn mlm_step<R: Rng + ?Sized>(
    model: &mut DualEncoderModel,
    opt: &mut AdamW,
    batch: &[TokenSequence],
    lr: f64,
    clip_norm: f64,
    rng: &mut R,
) -> Result<f64> {
    let masked: Vec<(TokenSequence, MlmLabels)> = batch
        .iter()
        .map(|t| mask_tokens(t, MLM_MASK_PROB, model.vocab_size, rng))
        .collect();
    let (loss, mut grads) = {
        let mut g = Graph::new(&model.store);
        let loss = mlm_loss(model, &mut g, &masked)?;
        (g.scalar(loss), g.backward(loss)?)
    };
    clip_global_norm(&mut grads, clip_norm);
    opt.step(&mut model.store, &grads, lr);
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::super::EncoderConfig;
    use super::*;
    use crate::numerics::AdamWConfig;
    use crate::tokenizer::{BOS, EOS, PIECE_OFFSET};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_probability_changes_nothing() {
        let t = TokenSequence::new((0..50).map(|i| PIECE_OFFSET + i).collect());
        let (out, labels) = mask_tokens(&t, 0.0, 400, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out, t);
        assert!(labels.iter().all(Option::is_none));
    }

    #[test]
    fn selection_rate_and_split() {
        let t = TokenSequence::new((0..1000).map(|i| PIECE_OFFSET + i % 200).collect());
        let (out, labels) = mask_tokens(&t, 0.3, 500, &mut ChaCha8Rng::seed_from_u64(42));
        let selected = labels.iter().filter(|l| l.is_some()).count();
        assert!((250..=350).contains(&selected), "{selected}");
        let masked = out.ids.iter().filter(|&&i| i == MASK).count();
        assert!(masked as f64 > 0.7 * selected as f64 && (masked as f64) < 0.9 * selected as f64);
        for (i, l) in labels.iter().enumerate() {
            match l {
                Some(orig) => assert_eq!(*orig, t.ids[i]),
                None => assert_eq!(out.ids[i], t.ids[i]),
            }
        }
        let again = mask_tokens(&t, 0.3, 500, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(again, (out, labels));
    }

    #[test]
    fn specials_and_padding_are_never_selected() {
        let t = TokenSequence::new(vec![BOS, PIECE_OFFSET, EOS]).padded(6);
        for seed in 0..200 {
            let (_, labels) = mask_tokens(&t, 1.0, 400, &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(labels, [None, Some(PIECE_OFFSET), None, None, None, None]);
        }
    }

    #[test]
    fn untrained_loss_is_near_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = DualEncoderModel::new(EncoderConfig::preset("desk").unwrap(), 500, &mut rng).unwrap();
        let batch: Vec<(TokenSequence, MlmLabels)> = (0..16)
            .map(|k| {
                let t = TokenSequence::new((0..12).map(|i| PIECE_OFFSET + (i * 17 + k * 5) % 239).collect());
                mask_tokens(&t, 0.3, 500, &mut rng)
            })
            .collect();
        let mut g = Graph::new(&m.store);
        let loss = mlm_loss(&m, &mut g, &batch).unwrap();
        let l = g.scalar(loss);
        assert!((l - 500f64.ln()).abs() < 0.05, "{l}");
    }

    #[test]
    fn nothing_selected_skips_the_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = DualEncoderModel::new(EncoderConfig::preset("desk").unwrap(), 300, &mut rng).unwrap();
        let mut opt = AdamW::new(&m.store, AdamWConfig::default());
        let before = m.store.clone();
        let batch = vec![TokenSequence::new(vec![BOS, EOS])];
        let r = mlm_step(&mut m, &mut opt, &batch, 1e-3, 10.0, &mut rng);
        assert!(matches!(r, Err(EncoderError::NoMaskedPositions)));
        assert_eq!(m.store, before);
    }
}
