use crate::audio::{MelSpectrogram, N_MELS};
use crate::numerics::{Graph, Tensor, Var};

use super::blocks::{attention, feed_forward, self_attention_pool};
use super::phoneme::sinusoids;
use super::{DualEncoderModel, EncoderError, Embedding, Modality, Result};

impl DualEncoderModel {
    /// Pooled speech representation (1×d) on `g`.
    ///
    /// Two 3-tap convolutions (the second with stride 2) halve the frame
    /// count; fixed sinusoidal positions; pre-norm transformer blocks with
    /// key masking; a final norm; then self-attention pooling over the valid
    /// positions.
    pub fn speech_forward(&self, g: &mut Graph, mel: &MelSpectrogram) -> Result<Var> {
        let frames = mel.n_frames();
        let valid = mel.valid_frames();
        if valid == 0 {
            return Err(EncoderError::AllMasked);
        }
        let max = self.cfg.max_positions * 2;
        if frames > max {
            return Err(EncoderError::SequenceTooLong { len: frames, max });
        }
        let ids = &self.speech;
        let heads = self.cfg.num_heads;
        let data: Vec<f64> = mel
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if i / N_MELS < valid { f64::from(v) } else { 0.0 })
            .collect();
        let frame_mask: Vec<bool> = (0..frames).map(|t| t < valid).collect();

        let x = g.constant(Tensor::matrix(frames, N_MELS, data)?)?;
        let (w1, b1, w2, b2) = (
            g.param(ids.conv1_w),
            g.param(ids.conv1_b),
            g.param(ids.conv2_w),
            g.param(ids.conv2_b),
        );
        let h = g.conv1d(x, w1, 3, 1, 1)?;
        let h = g.add_row(h, b1)?;
        let h = g.gelu(h)?;
        // Zero padded frames so the strided conv sees the same borders as an unpadded input.
        let h = g.mask_rows(h, &frame_mask)?;
        let h = g.conv1d(h, w2, 3, 2, 1)?;
        let h = g.add_row(h, b2)?;
        let h = g.gelu(h)?;

        let positions = g.shape(h).0;
        let pos_valid = valid.div_ceil(2);
        let key_mask: Vec<bool> = (0..positions).map(|j| j < pos_valid).collect();
        let pe = g.constant(sinusoids(positions, self.cfg.hidden_dim))?;
        let mut h = g.add(h, pe)?;

        for layer in &ids.layers {
            let (g1, b1) = (g.param(layer.ln1_g), g.param(layer.ln1_b));
            let a = g.layer_norm(h, g1, b1)?;
            let a = attention(g, layer, a, &key_mask, heads)?;
            h = g.add(h, a)?;
            let (g2, b2) = (g.param(layer.ln2_g), g.param(layer.ln2_b));
            let f = g.layer_norm(h, g2, b2)?;
            let f = feed_forward(g, layer, f)?;
            h = g.add(h, f)?;
        }
        let (gp, bp) = (g.param(ids.ln_post_g), g.param(ids.ln_post_b));
        let h = g.layer_norm(h, gp, bp)?;
        let q = g.param(ids.pool_query);
        self_attention_pool(g, q, h, &key_mask)
    }

    pub fn encode_speech(&self, mel: &MelSpectrogram) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let v = self.speech_forward(&mut g, mel)?;
        Ok(g.value(v).data.clone())
    }

    pub fn embed_speech(&self, id: impl Into<String>, mel: &MelSpectrogram) -> Result<Embedding> {
        Ok(Embedding {
            id: id.into(),
            modality: Modality::Speech,
            vector: self.encode_speech(mel)?,
        })
    }
}
