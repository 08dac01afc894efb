use super::{Grads, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adaptive moments with decoupled weight decay. Only parameters of rank ≥ 2
/// are decayed; biases, norms and scalars are not.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    decay: Vec<bool>,
    steps: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore, cfg: AdamWConfig) -> Self {
        let zeros = || store.ids().map(|id| vec![0.0; store.get(id).len()]).collect::<Vec<_>>();
        AdamW {
            m: zeros(),
            v: zeros(),
            decay: store.ids().map(|id| store.get(id).shape.len() >= 2).collect(),
            cfg,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) {
        self.steps += 1;
        let t = self.steps as i32;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let k = id.index();
            let g = grads.get(id);
            let decay = if self.decay[k] { c.weight_decay } else { 0.0 };
            let p = &mut store.get_mut(id).data;
            for i in 0..p.len() {
                self.m[k][i] = c.beta1 * self.m[k][i] + (1.0 - c.beta1) * g[i];
                self.v[k][i] = c.beta2 * self.v[k][i] + (1.0 - c.beta2) * g[i] * g[i];
                let mhat = self.m[k][i] / bc1;
                let vhat = self.v[k][i] / bc2;
                p[i] -= lr * (decay * p[i] + mhat / (vhat.sqrt() + c.eps));
            }
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = ParamStore::new();
        let w = s.add("w", Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap()).unwrap();
        let b = s.add("b", Tensor::new(vec![2], vec![1.0, -1.0]).unwrap()).unwrap();
        let mut opt = AdamW::new(&s, AdamWConfig::default());
        let grads = Grads(vec![vec![0.5, -2.0], vec![0.5, -2.0]]);
        opt.step(&mut s, &grads, 0.1);
        // Bias-corrected first step is lr · sign(g) (up to eps), plus decay on w.
        let wd = s.get(w).data.clone();
        assert!((wd[0] - (1.0 - 0.1 * (0.01 + 1.0))).abs() < 1e-6);
        assert!((wd[1] - (-1.0 + 0.1 * (0.01 + 1.0))).abs() < 1e-6);
        let bd = &s.get(b).data;
        assert!((bd[0] - 0.9).abs() < 1e-6 && (bd[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = Grads(vec![vec![30.0, 40.0]]);
        assert_eq!(clip_global_norm(&mut g, 10.0), 50.0);
        assert!((g.global_norm() - 10.0).abs() < 1e-12);
        let mut small = Grads(vec![vec![3.0, 4.0]]);
        clip_global_norm(&mut small, 10.0);
        assert_eq!(small.0[0], [3.0, 4.0]);
    }
}
