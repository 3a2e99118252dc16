use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Named parameters with gradient accumulators and Adam moments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        let zeros = Tensor::zeros(value.dim());
        self.params.push(Param {
            name,
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn add_grad(&mut self, id: ParamId, g: &Tensor) {
        self.params[id.0].grad += g;
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// One bias-corrected Adam update from the accumulated gradients.
    ///
    /// Fails without touching any parameter if a gradient is non-finite.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        for p in &self.params {
            if let Some(pos) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {} at flat index {pos} is {}",
                    p.name,
                    p.grad.iter().nth(pos).unwrap()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for p in &mut self.params {
            Zip::from(&mut p.value)
                .and(&mut p.m)
                .and(&mut p.v)
                .and(&p.grad)
                .for_each(|w, m, v, &g| {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                });
        }
        Ok(())
    }
}

/// Free function form of [`ParamStore::adam_step`].
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) -> Result<()> {
    store.adam_step(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = ParamStore::new();
        let id = s.add("w", array![[1.0, -2.0]]);
        s.adam_step(&AdamConfig::default()).unwrap();
        assert_eq!(s.value(id), &array![[1.0, -2.0]]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = ParamStore::new();
        let id = s.add("p", array![[0.0]]);
        s.add_grad(id, &array![[1.0]]);
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        s.adam_step(&cfg).unwrap();
        assert!((s.value(id)[[0, 0]] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut s = ParamStore::new();
        let id = s.add("p", array![[0.0, 0.0]]);
        s.add_grad(id, &array![[1.0, f64::NAN]]);
        let err = s.adam_step(&AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("index 1"), "{err}");
        assert_eq!(s.value(id), &array![[0.0, 0.0]]);
        assert_eq!(s.step_count(), 0);
    }

    #[test]
    fn deterministic_updates() {
        let run = || {
            let mut s = ParamStore::new();
            let id = s.add("p", array![[0.3, -0.7]]);
            for k in 0..5 {
                s.zero_grad();
                s.add_grad(id, &array![[0.1 * k as f64, -0.2]]);
                s.adam_step(&AdamConfig::default()).unwrap();
            }
            s.value(id).clone()
        };
        assert_eq!(run(), run());
    }
}
