use super::params::{ParamId, ParamStore};
use super::tape::Grads;
use super::tensor::Tensor;

/// Adaptive-moment gradient descent over a fixed group of parameter blocks.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    params: Vec<ParamId>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, params: Vec<ParamId>, lr: f64, beta1: f64, beta2: f64) -> Self {
        let m: Vec<Tensor> = params.iter().map(|&p| Tensor::zeros(store.get(p).shape())).collect();
        Self { lr, beta1, beta2, eps: 1e-8, step: 0, v: m.clone(), m, params }
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Blocks absent from `grads` are treated as having a
    /// zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, &pid) in self.params.iter().enumerate() {
            let g = grads.get(pid);
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let p = store.get_mut(pid).data_mut();
            for j in 0..p.len() {
                let gj = g.map_or(0.0, |g| g.data()[j]);
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
