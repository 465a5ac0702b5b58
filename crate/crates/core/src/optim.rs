//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::dtype::Scalar;
use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    /// Zero-initialized moments shaped like the store's parameters.
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || -> Vec<Tensor<T>> {
            params
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape().to_vec()))
                .collect()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// Restore state saved by a checkpoint.
    pub fn restore(&mut self, step: u64, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>) -> Result<()> {
        let shapes_ok = m.len() == self.m.len()
            && v.len() == self.v.len()
            && m.iter().zip(&self.m).all(|(a, b)| a.shape() == b.shape())
            && v.iter().zip(&self.v).all(|(a, b)| a.shape() == b.shape());
        if !shapes_ok {
            return Err(Error::Config("optimizer state does not match parameters".into()));
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// Apply one update. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::dim(
                "Adam::step",
                format!("{} grads for {} params", grads.len(), params.len()),
            ));
        }
        for ((id, p), g) in params.iter().zip(grads) {
            if g.shape() != p.value.shape() {
                return Err(Error::dim(
                    "Adam::step",
                    format!("{}: grad {:?} vs value {:?}", p.name, g.shape(), p.value.shape()),
                ));
            }
            if !g.all_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient for parameter {} (#{})",
                    p.name,
                    id.index()
                )));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let step_size = T::of(c.lr / bc1);
        let inv_sqrt_bc2 = T::of(1.0 / bc2.sqrt());
        let eps = T::of(c.eps);
        let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let w = params.get_mut(id).data_mut();
            for j in 0..g.len() {
                m[j] = b1 * m[j] + one_b1 * g[j];
                v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
                w[j] -= step_size * m[j] / (v[j].sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}
