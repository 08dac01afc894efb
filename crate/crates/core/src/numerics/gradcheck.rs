use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, NumericsError, ParamStore, Var};

const H: f64 = 1e-5;

/// Compares analytic gradients with central finite differences (h = 1e-5).
///
/// For each parameter tensor, checks up to `samples` entries (all of them when
/// the tensor is small, otherwise a seeded subset that always includes the
/// entry with the largest analytic gradient) and scores
/// `max|analytic − numeric| / max(max|analytic|, max|numeric|, 1e-8)`.
/// Returns the worst score over parameters.
pub fn grad_check<F, E>(store: &ParamStore, f: F, samples: usize, seed: u64) -> Result<f64, E>
where
    F: Fn(&mut Graph) -> Result<Var, E>,
    E: From<NumericsError>,
{
    let grads = {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for id in store.ids() {
        let analytic = grads.get(id);
        let len = analytic.len();
        let picks: Vec<usize> = if len <= samples {
            (0..len).collect()
        } else {
            let top = (0..len)
                .max_by(|&a, &b| analytic[a].abs().total_cmp(&analytic[b].abs()))
                .expect("non-empty");
            let mut v: Vec<usize> = sample(&mut rng, len, samples.saturating_sub(1).max(1)).into_vec();
            if !v.contains(&top) {
                v.push(top);
            }
            v
        };
        let (mut diff, mut scale_a, mut scale_n) = (0.0f64, 0.0f64, 0.0f64);
        for i in picks {
            let orig = probe.get(id).data[i];
            let mut eval = |x: f64| -> Result<f64, E> {
                probe.get_mut(id).data[i] = x;
                let mut g = Graph::new(&probe);
                let loss = f(&mut g)?;
                Ok(g.scalar(loss))
            };
            let numeric = (eval(orig + H)? - eval(orig - H)?) / (2.0 * H);
            probe.get_mut(id).data[i] = orig;
            diff = diff.max((analytic[i] - numeric).abs());
            scale_a = scale_a.max(analytic[i].abs());
            scale_n = scale_n.max(numeric.abs());
        }
        worst = worst.max(diff / scale_a.max(scale_n).max(1e-8));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::SeedableRng;

    #[test]
    fn identity_map_is_exact() {
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap()).unwrap();
        let err = grad_check(
            &s,
            |g| {
                let v = g.param(x);
                g.sum_all(v)
            },
            16,
            0,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn attention_block_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (t, d) = (6, 8);
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::randn(&[t, d], 1.0, &mut rng)).unwrap();
        let wq = s.add("wq", Tensor::randn(&[d, d], 0.3, &mut rng)).unwrap();
        let wk = s.add("wk", Tensor::randn(&[d, d], 0.3, &mut rng)).unwrap();
        let wv = s.add("wv", Tensor::randn(&[d, d], 0.3, &mut rng)).unwrap();
        let mask = [true, true, true, true, false, false];
        let err = grad_check(
            &s,
            |g| {
                let xv = g.param(x);
                let (q, k, v) = (g.param(wq), g.param(wk), g.param(wv));
                let q = g.matmul(xv, q)?;
                let k = g.matmul(xv, k)?;
                let v = g.matmul(xv, v)?;
                let scores = g.matmul_nt(q, k)?;
                let scores = g.scale(scores, 1.0 / (d as f64).sqrt())?;
                let att = g.masked_softmax(scores, &mask)?;
                let out = g.matmul(att, v)?;
                let pooled = g.mean_over_mask(out, &mask)?;
                let sq = g.mul(pooled, pooled)?;
                g.sum_all(sq)
            },
            16,
            1,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }
}
