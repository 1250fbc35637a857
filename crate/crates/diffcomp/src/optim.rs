use crate::error::{Error, Result};
use crate::params::ParamBundle;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected adaptive-moment optimizer state for one bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: ParamBundle,
    pub v: ParamBundle,
    pub t: u64,
}

impl Adam {
    pub fn new(params: &ParamBundle, config: AdamConfig) -> Self {
        Self { config, m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    pub fn step(&mut self, params: &mut ParamBundle, grads: &ParamBundle) -> Result<()> {
        params.check_compatible(grads)?;
        params.check_compatible(&self.m).map_err(|e| Error::Shape(format!("optimizer state: {e}")))?;
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for idx in 0..params.len() {
            let g = grads.tensor(idx).data();
            let m = self.m.tensor_mut(idx).data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
            }
            let v = self.v.tensor_mut(idx).data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            }
            let (m, v) = (self.m.tensor(idx).data(), self.v.tensor(idx).data());
            let p = params.tensor_mut(idx).data_mut();
            for ((pi, mi), vi) in p.iter_mut().zip(m).zip(v) {
                let mhat = mi / c1;
                let vhat = vi / c2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
