use super::matrix::Matrix;
use super::params::ParamStore;
use crate::{Error, Result};

/// Adam optimizer state with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = |s: &ParamStore| {
            s.iter()
                .map(|(_, p)| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients held in `store` and zeroes them.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::ConfigMismatch(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        if let Some((_, p)) = store.iter().find(|(_, p)| !p.grad.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient in parameter {}",
                p.name
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powf(self.t as f64);
        let bc2 = 1.0 - self.beta2.powf(self.t as f64);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.as_slice();
            let (m, v) = (m.as_mut_slice(), v.as_mut_slice());
            for (i, x) in p.value.as_mut_slice().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            p.grad.fill(0.0);
        }
        Ok(())
    }
}
