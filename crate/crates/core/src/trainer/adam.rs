use std::collections::BTreeMap;

use savp_tensor::{Element, Tensor};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Bias-corrected Adam over a named parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F: Element> {
    pub config: AdamConfig,
    pub m: BTreeMap<String, Tensor<F>>,
    pub v: BTreeMap<String, Tensor<F>>,
    pub step: u64,
}

impl<F: Element> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            step: 0,
        }
    }

    /// Applies one update with learning rate `lr`. Nothing is modified when
    /// any gradient is non-finite.
    pub fn update(&mut self, params: &mut ParamStore<F>, grads: &BTreeMap<String, Tensor<F>>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
            if params.get(name)?.shape() != g.shape() {
                return Err(Error::Mismatch(format!("gradient for {name} has shape {:?}", g.shape())));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (name, g) in grads {
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let p = params.get_mut(name)?;
            for (((p, m), v), &g) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                let g = g.to_f64();
                let mn = beta1 * m.to_f64() + (1.0 - beta1) * g;
                let vn = beta2 * v.to_f64() + (1.0 - beta2) * g * g;
                *m = F::of(mn);
                *v = F::of(vn);
                let delta = lr * (mn / c1) / ((vn / c2).sqrt() + eps);
                *p = F::of(p.to_f64() - delta);
            }
        }
        Ok(())
    }
}
