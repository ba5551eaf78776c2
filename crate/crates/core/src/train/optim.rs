use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Element;

/// Adam with decoupled weight decay:
/// `θ ← θ·(1 − lr·λ) − lr·m̂ / (√v̂ + ε)`.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Element> AdamW<T> {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients held in `store`. A parameter
    /// without a gradient is treated as having a zero gradient. Nothing is
    /// modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        for p in store.iter() {
            if let Some(i) = p.tensor.grad().and_then(|g| g.iter().position(|v| !v.is_finite())) {
                return Err(Error::NonFinite(format!("gradient of {} at element {i}", p.name)));
            }
        }
        if self.m.is_empty() {
            self.m = store.iter().map(|p| vec![T::zero(); p.tensor.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != store.len() {
            return Err(Error::contract("optimizer state belongs to a different parameter set"));
        }
        self.step += 1;
        let t = self.step as i32;
        let lr = T::from_f64(self.lr);
        let decay = T::from_f64(1.0 - self.lr * self.weight_decay);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let c1 = T::from_f64(1.0 - self.beta1.powi(t));
        let c2 = T::from_f64(1.0 - self.beta2.powi(t));
        let eps = T::from_f64(self.eps);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.tensor.take_grad();
            let data = p.tensor.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(T::zero(), |g| g[i]);
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                data[i] = data[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
