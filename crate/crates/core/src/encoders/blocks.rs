use crate::numerics::{Graph, NumericsError, Var};

use super::{EncoderError, LayerIds, Result};

pub(crate) fn linear(g: &mut Graph, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = g.matmul(x, w)?;
    Ok(match b {
        Some(b) => g.add_row(y, b)?,
        None => y,
    })
}

/// Multi-head self-attention where queries attend only to valid keys.
pub(crate) fn attention(g: &mut Graph, ids: &LayerIds, x: Var, key_mask: &[bool], heads: usize) -> Result<Var> {
    let d = g.shape(x).1;
    let hd = d / heads;
    let (wq, bq, wk, wv, bv, wo, bo) = (
        g.param(ids.wq),
        g.param(ids.bq),
        g.param(ids.wk),
        g.param(ids.wv),
        g.param(ids.bv),
        g.param(ids.wo),
        g.param(ids.bo),
    );
    let q = linear(g, x, wq, Some(bq))?;
    let k = linear(g, x, wk, None)?;
    let v = linear(g, x, wv, Some(bv))?;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * hd, (h + 1) * hd);
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (g.slice_cols(q, lo, hi)?, g.slice_cols(k, lo, hi)?, g.slice_cols(v, lo, hi)?)
        };
        let scores = g.matmul_nt(qh, kh)?;
        let scores = g.scale(scores, scale)?;
        let weights = g.masked_softmax(scores, key_mask).map_err(all_masked)?;
        outs.push(g.matmul(weights, vh)?);
    }
    let merged = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    linear(g, merged, wo, Some(bo))
}

pub(crate) fn feed_forward(g: &mut Graph, ids: &LayerIds, x: Var) -> Result<Var> {
    let (w1, b1, w2, b2) = (g.param(ids.w1), g.param(ids.b1), g.param(ids.w2), g.param(ids.b2));
    let h = linear(g, x, w1, Some(b1))?;
    let h = g.gelu(h)?;
    linear(g, h, w2, Some(b2))
}

pub(crate) fn all_masked(e: NumericsError) -> EncoderError {
    match e {
        NumericsError::AllMasked { .. } => EncoderError::AllMasked,
        other => other.into(),
    }
}

/// Softmax over `query · state` across valid rows, then the weighted sum of
/// states. `query` is 1×d, `states` T×d; returns 1×d.
pub fn self_attention_pool(g: &mut Graph, query: Var, states: Var, mask: &[bool]) -> Result<Var> {
    let scores = g.matmul_nt(query, states)?;
    let weights = g.masked_softmax(scores, mask).map_err(all_masked)?;
    Ok(g.matmul(weights, states)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{ParamStore, Tensor};

    fn pool(states: Vec<f64>, rows: usize, query: Vec<f64>, mask: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let d = query.len();
        let q = g.constant(Tensor::matrix(1, d, query).unwrap())?;
        let st = g.constant(Tensor::matrix(rows, d, states).unwrap())?;
        let out = self_attention_pool(&mut g, q, st, mask)?;
        let scores = g.matmul_nt(q, st)?;
        let w = g.masked_softmax(scores, mask)?;
        Ok((g.value(out).data.clone(), g.value(w).data.clone()))
    }

    #[test]
    fn single_valid_position_is_returned() {
        let (out, _) = pool(vec![1.0, 2.0, 9.0, 9.0], 2, vec![0.3, -0.1], &[true, false]).unwrap();
        assert_eq!(out, [1.0, 2.0]);
    }

    #[test]
    fn equal_scores_average() {
        // Query orthogonal to every state: all scores 0.
        let (out, _) = pool(vec![0.0, 1.0, 0.0, 3.0, 0.0, 8.0], 3, vec![1.0, 0.0], &[true, true, false]).unwrap();
        assert_eq!(out, [0.0, 2.0]);
    }

    #[test]
    fn log_two_scores_give_two_thirds() {
        let ln2 = 2f64.ln();
        let (out, w) = pool(vec![ln2, 1.0, 0.0, 0.0], 2, vec![1.0, 0.0], &[true, true]).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((out[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn nothing_valid_is_an_error() {
        assert!(matches!(
            pool(vec![1.0, 2.0], 1, vec![1.0, 1.0], &[false]),
            Err(EncoderError::AllMasked)
        ));
    }
}
