use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Scalar;

use super::param::Parameter;

/// Bias-corrected ADAM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 0.0002,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    /// Applies one update to every parameter and zeroes the gradients.
    ///
    /// All gradients are checked before anything is modified, so a
    /// non-finite gradient leaves every parameter untouched.
    pub fn step<'a, T: Scalar>(&self, params: impl IntoIterator<Item = &'a mut Parameter<T>>) -> Result<()> {
        let mut params: Vec<&mut Parameter<T>> = params.into_iter().collect();
        if let Some(bad) = params.iter().find(|p| !p.grad.all_finite()) {
            return Err(Error::NonFinite(format!("gradient of parameter {}", bad.name)));
        }
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (c1, c2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let eps = T::of(self.eps);
        for p in params.iter_mut() {
            p.step_count += 1;
            let t = p.step_count as i32;
            let lr_t = T::of(self.lr / (1.0 - self.beta1.powi(t)));
            let v_corr = T::of(1.0 / (1.0 - self.beta2.powi(t)));
            let Parameter {
                value,
                grad,
                adam_m,
                adam_v,
                ..
            } = &mut **p;
            for (((w, g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data_mut().iter_mut())
                .zip(adam_m.data_mut().iter_mut())
                .zip(adam_v.data_mut().iter_mut())
            {
                *m = b1 * *m + c1 * *g;
                *v = b2 * *v + c2 * *g * *g;
                *w = *w - lr_t * *m / ((*v * v_corr).sqrt() + eps);
                *g = T::zero();
            }
        }
        Ok(())
    }
}
