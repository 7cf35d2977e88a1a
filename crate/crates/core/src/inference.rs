//! Gradient-free rollouts and discriminator scoring.

use rand::Rng;
use savp_tensor::{Tape, Tensor};

use crate::error::{Error, Result};
use crate::layers::SpectralStore;
use crate::model::{prior_latents, Model};
use crate::params::{Binder, ParamStore};

/// Fully autoregressive prediction of `horizon` frames after the first
/// `context` frames of `video` (`[b, >= context, c, h, w]`), with prior codes
/// drawn from `rng` when the variant uses latents. Returns `[b, horizon, c, h, w]`.
pub fn predict(
    model: &Model,
    params: &ParamStore<f32>,
    video: &Tensor<f32>,
    context: usize,
    horizon: usize,
    actions: Option<&Tensor<f32>>,
    rng: &mut impl Rng,
) -> Result<Tensor<f32>> {
    let s = video.shape();
    let cfg = &model.config;
    if s.len() != 5 || s[2] != cfg.channels || s[3] != cfg.height || s[4] != cfg.width {
        return Err(Error::Mismatch(format!(
            "videos of shape {s:?} do not fit a {}x{}x{} model",
            cfg.channels, cfg.height, cfg.width
        )));
    }
    let steps = context - 1 + horizon;
    let tape = Tape::new();
    let bind = Binder::frozen(params, &tape);
    let video = tape.constant(video.narrow(1, 0, context.min(s[1]))?);
    let actions = match actions {
        Some(a) if a.shape().len() == 3 && a.shape()[1] >= steps => Some(tape.constant(a.narrow(1, 0, steps)?)),
        Some(a) => {
            return Err(Error::Mismatch(format!("action track {:?} shorter than {steps} steps", a.shape())));
        }
        None if cfg.n_actions > 0 => return Err(Error::Mismatch("model expects actions".into())),
        None => None,
    };
    let latents = cfg
        .variant
        .uses_latents()
        .then(|| prior_latents(&tape, rng, s[0], steps, cfg.nz));
    let out = model.generator.rollout(
        &bind,
        &video,
        context,
        horizon,
        latents.as_ref().map(|l| &l.z),
        actions.as_ref(),
        &vec![false; steps],
    )?;
    Ok(out.value().clone())
}

/// Logits of the prior-path discriminator for videos `[b, t, c, h, w]`.
/// Power iteration runs on a copy of the stored vectors.
pub fn discriminator_logits(
    model: &Model,
    params: &ParamStore<f32>,
    spectral: &SpectralStore<f32>,
    power_iters: usize,
    videos: &Tensor<f32>,
) -> Result<Vec<f32>> {
    let disc = model
        .discriminator
        .as_ref()
        .ok_or_else(|| Error::Config(format!("variant {} has no discriminator", model.config.variant.name())))?;
    let tape = Tape::new();
    let bind = Binder::frozen(params, &tape);
    let mut spectral = spectral.clone();
    let w = disc.normalized_weights(&bind, &mut spectral, power_iters)?;
    Ok(disc.score(&bind, &w, &tape.constant(videos.clone()))?.value().data().to_vec())
}
