use rand::Rng;
use rand_distr::StandardNormal;
use savp_tensor::{Element, Tensor, Var};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentSource {
    Prior,
    Posterior,
}

/// Latent codes `[b, steps, nz]`, plus the posterior statistics when the
/// codes came from the encoder.
#[derive(Clone, Debug)]
pub struct LatentTrack<'t, F: Element> {
    pub z: Var<'t, F>,
    pub stats: Option<(Var<'t, F>, Var<'t, F>)>,
    pub source: LatentSource,
}

pub fn standard_normal<F: Element>(rng: &mut impl Rng, shape: &[usize]) -> Tensor<F> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| F::of(rng.sample::<f64, _>(StandardNormal))).collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

/// Independent `N(0, 1)` codes for every step.
pub fn prior_latents<'t, F: Element>(
    tape: &'t savp_tensor::Tape<F>,
    rng: &mut impl Rng,
    batch: usize,
    steps: usize,
    nz: usize,
) -> LatentTrack<'t, F> {
    LatentTrack {
        z: tape.constant(standard_normal(rng, &[batch, steps, nz])),
        stats: None,
        source: LatentSource::Prior,
    }
}

/// Reparametrised sample `z = mu + exp(log_sigma) * eps`.
pub fn posterior_sample<'t, F: Element>(
    mu: &Var<'t, F>,
    log_sigma: &Var<'t, F>,
    eps: Tensor<F>,
) -> Result<LatentTrack<'t, F>> {
    let eps = mu.tape().constant(eps);
    let z = mu.add(&log_sigma.exp().mul(&eps)?)?;
    Ok(LatentTrack {
        z,
        stats: Some((mu.clone(), log_sigma.clone())),
        source: LatentSource::Posterior,
    })
}
