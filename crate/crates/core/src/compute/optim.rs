use super::{ParamStore, Tensor2D};

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    steps: u64,
    moments: Vec<Option<(Tensor2D, Tensor2D)>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, clip_norm: Some(1.0), steps: 0, moments: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update to every trainable parameter from its accumulated
    /// gradient, then clears all gradients. Returns the pre-clip gradient norm.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> f64 {
        self.steps += 1;
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let ids: Vec<_> = store.iter().filter(|(_, _, p)| p.trainable).map(|(id, _, _)| id).collect();
        let norm = ids
            .iter()
            .map(|&id| store.get(id).grad.data().iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        let clip = match self.clip_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for id in ids {
            let p = store.get_mut(id);
            let (m, v) = self.moments[id.0].get_or_insert_with(|| {
                (Tensor2D::zeros(p.value.rows(), p.value.cols()), Tensor2D::zeros(p.value.rows(), p.value.cols()))
            });
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for i in 0..values.len() {
                let g = grads[i] * clip;
                let mi = &mut m.data_mut()[i];
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                let mhat = *mi / bc1;
                let vi = &mut v.data_mut()[i];
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let vhat = *vi / bc2;
                values[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * values[i]);
            }
        }
        store.zero_grads();
        norm
    }
}
