use crate::error::DiffError;
use crate::ParamStore;

/// Bias-corrected Adam.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    /// Applies one update to every parameter and clears the gradients.
    /// Fails without touching anything if some parameter has no gradient.
    pub fn step(&self, store: &mut ParamStore) -> Result<(), DiffError> {
        if let Some(p) = store.iter().find(|p| p.grad.is_none()) {
            return Err(DiffError::MissingGradient(p.name.clone()));
        }
        for p in store.iter_mut() {
            let grad = p.grad.take().expect("checked above");
            p.step_count += 1;
            let t = p.step_count as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let values = p.value.data_mut();
            for (i, &g) in grad.data().iter().enumerate() {
                let m = self.beta1 * p.adam_m[i] + (1.0 - self.beta1) * g;
                let v = self.beta2 * p.adam_v[i] + (1.0 - self.beta2) * g * g;
                p.adam_m[i] = m;
                p.adam_v[i] = v;
                let m_hat = m / c1;
                let v_hat = v / c2;
                values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
