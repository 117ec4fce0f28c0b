//! Adaptive-moment optimizer with decoupled weight decay.

use crate::numerics::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First and second moments per parameter, aligned with the store's insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, store: &ParamStore) -> Self {
        let zeros = |i| vec![0.0f32; store.by_index(i).value.len()];
        Self { cfg, t: 0, m: (0..store.len()).map(zeros).collect(), v: (0..store.len()).map(zeros).collect() }
    }

    /// One update from the gradients currently in `store`:
    /// `p ← p − lr·(m̂/(√v̂ + ε) + wd·p)`.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for i in 0..store.len() {
            let p = store.by_index_mut(i);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let grads = p.grad.data().to_vec();
            for (j, (w, g)) in p.value.data_mut().iter_mut().zip(grads).enumerate() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *w -= c.lr * (mh / (vh.sqrt() + c.eps) + c.weight_decay * *w);
            }
        }
    }
}

/// Scales gradients so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f32) -> f32 {
    let sq: f64 = store.iter().flat_map(|p| p.grad.data()).map(|&g| (g as f64) * (g as f64)).sum();
    let norm = sq.sqrt() as f32;
    if max_norm > 0.0 && norm > max_norm {
        store.scale_grads(max_norm / norm);
    }
    norm
}
