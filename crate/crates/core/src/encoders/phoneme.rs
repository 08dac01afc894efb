use crate::numerics::{Graph, Tensor, Var};
use crate::tokenizer::TokenSequence;

use super::blocks::{all_masked, attention, feed_forward};
use super::{DualEncoderModel, EncoderError, Embedding, Modality, Result};

/// Fixed sinusoidal position table, `positions × dim`: sines in the first
/// half of the columns, cosines in the second, geometric timescales 1 to 10⁴.
pub fn sinusoids(positions: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let step = (10_000f64).ln() / (half.max(2) - 1) as f64;
    let mut data = vec![0.0; positions * dim];
    for p in 0..positions {
        for i in 0..half {
            let angle = p as f64 * (-step * i as f64).exp();
            data[p * dim + i] = angle.sin();
            data[p * dim + half + i] = angle.cos();
        }
    }
    Tensor {
        shape: vec![positions, dim],
        data,
    }
}

impl DualEncoderModel {
    /// Final hidden states (L×d) of the phoneme encoder and the validity mask.
    ///
    /// Token plus learned position embeddings, a norm, then post-norm
    /// transformer blocks with key masking.
    pub fn phoneme_states(&self, g: &mut Graph, tokens: &TokenSequence) -> Result<(Var, Vec<bool>)> {
        let len = tokens.len();
        if tokens.valid_len() == 0 {
            return Err(EncoderError::AllMasked);
        }
        if len > self.cfg.max_positions {
            return Err(EncoderError::SequenceTooLong {
                len,
                max: self.cfg.max_positions,
            });
        }
        let ids = &self.phoneme;
        let valid = tokens.valid_len();
        let mask: Vec<bool> = (0..len).map(|i| i < valid).collect();
        let tok: Vec<usize> = tokens.ids.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..len).collect();

        let (te, pe) = (g.param(ids.tok_emb), g.param(ids.pos_emb));
        let t = g.embedding(te, &tok)?;
        let p = g.embedding(pe, &positions)?;
        let h = g.add(t, p)?;
        let (eg, eb) = (g.param(ids.emb_ln_g), g.param(ids.emb_ln_b));
        let mut h = g.layer_norm(h, eg, eb)?;
        for layer in &ids.layers {
            let a = attention(g, layer, h, &mask, self.cfg.num_heads)?;
            let s = g.add(h, a)?;
            let (g1, b1) = (g.param(layer.ln1_g), g.param(layer.ln1_b));
            h = g.layer_norm(s, g1, b1)?;
            let f = feed_forward(g, layer, h)?;
            let s = g.add(h, f)?;
            let (g2, b2) = (g.param(layer.ln2_g), g.param(layer.ln2_b));
            h = g.layer_norm(s, g2, b2)?;
        }
        Ok((h, mask))
    }

    /// Mean of the final hidden states over valid tokens (1×d).
    pub fn phoneme_forward(&self, g: &mut Graph, tokens: &TokenSequence) -> Result<Var> {
        let (h, mask) = self.phoneme_states(g, tokens)?;
        g.mean_over_mask(h, &mask).map_err(all_masked)
    }

    pub fn encode_phonemes(&self, tokens: &TokenSequence) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let v = self.phoneme_forward(&mut g, tokens)?;
        Ok(g.value(v).data.clone())
    }

    pub fn embed_phonemes(&self, id: impl Into<String>, tokens: &TokenSequence) -> Result<Embedding> {
        Ok(Embedding {
            id: id.into(),
            modality: Modality::Phoneme,
            vector: self.encode_phonemes(tokens)?,
        })
    }
}
