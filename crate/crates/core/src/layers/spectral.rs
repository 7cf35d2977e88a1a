//! Spectral weight normalisation by power iteration.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use savp_tensor::{Element, Tensor, Var};

use super::InitRng;
use crate::error::{Error, Result};

/// Persistent power-iteration vectors for a weight viewed as `[rows, cols]`,
/// where `rows` is the leading extent and `cols` the product of the rest.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState<F: Element> {
    pub u: Vec<F>,
    pub v: Vec<F>,
}

pub type SpectralStore<F> = BTreeMap<String, SpectralState<F>>;

fn normalize<F: Element>(x: &mut [F]) -> Option<()> {
    let norm = x.iter().map(|&v| v * v).sum::<F>().sqrt();
    if !(norm > F::zero()) || !norm.is_finite() {
        return None;
    }
    x.iter_mut().for_each(|v| *v = *v / norm);
    Some(())
}

impl<F: Element> SpectralState<F> {
    pub fn init(shape: &[usize], rng: &mut InitRng) -> Self {
        let rows = shape[0];
        let cols = shape[1..].iter().product();
        let mut draw = |n: usize| {
            let mut x: Vec<F> = (0..n)
                .map(|_| F::of(<StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)))
                .collect();
            if normalize(&mut x).is_none() {
                x[0] = F::one();
            }
            x
        };
        let u = draw(rows);
        let v = draw(cols);
        Self { u, v }
    }

    pub fn cast<G: Element>(&self) -> SpectralState<G> {
        SpectralState {
            u: self.u.iter().map(|&x| G::of(x.to_f64())).collect(),
            v: self.v.iter().map(|&x| G::of(x.to_f64())).collect(),
        }
    }
}

/// Runs `iters` rounds of `v <- W^T u / |W^T u|`, `u <- W v / |W v|` and
/// returns the estimate `sigma = u^T W v`.
pub fn power_iterate<F: Element>(w: &Tensor<F>, state: &mut SpectralState<F>, iters: usize) -> Result<F> {
    let rows = w.shape()[0];
    let cols = w.numel() / rows;
    if state.u.len() != rows || state.v.len() != cols {
        return Err(Error::Mismatch(format!(
            "spectral state {}x{} for weight {:?}",
            state.u.len(),
            state.v.len(),
            w.shape()
        )));
    }
    let m = w.data();
    let zero = || Error::Tensor(savp_tensor::TensorError::Domain {
        op: "spectral_normalize",
        detail: "weight matrix is zero; spectral norm undefined".into(),
    });
    for _ in 0..iters {
        let mut v = vec![F::zero(); cols];
        for (r, &ur) in state.u.iter().enumerate() {
            for (vc, &wrc) in v.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
                *vc = *vc + wrc * ur;
            }
        }
        normalize(&mut v).ok_or_else(zero)?;
        let mut u: Vec<F> = (0..rows)
            .map(|r| m[r * cols..(r + 1) * cols].iter().zip(&v).map(|(&a, &b)| a * b).sum())
            .collect();
        normalize(&mut u).ok_or_else(zero)?;
        state.u = u;
        state.v = v;
    }
    let sigma: F = (0..rows)
        .map(|r| state.u[r] * m[r * cols..(r + 1) * cols].iter().zip(&state.v).map(|(&a, &b)| a * b).sum::<F>())
        .sum();
    if !(sigma > F::zero()) {
        return Err(zero());
    }
    Ok(sigma)
}

/// `W / sigma` with `sigma = u^T W v` after updating `u`, `v` in place.
/// The gradient flows through `sigma` as a function of `W`; `u`, `v` are
/// treated as constants.
pub fn spectral_normalize<'t, F: Element>(
    w: &Var<'t, F>,
    state: &mut SpectralState<F>,
    iters: usize,
) -> Result<Var<'t, F>> {
    if iters == 0 {
        return Err(Error::Config("spectral normalisation needs at least one power iteration".into()));
    }
    power_iterate(w.value(), state, iters)?;
    let rows = state.u.len();
    let cols = state.v.len();
    let mut outer = Vec::with_capacity(rows * cols);
    for &ur in &state.u {
        outer.extend(state.v.iter().map(|&vc| ur * vc));
    }
    let uv = w.tape().constant(Tensor::new(w.shape().to_vec(), outer)?);
    let sigma = w.mul(&uv)?.sum();
    Ok(w.div(&sigma)?)
}
