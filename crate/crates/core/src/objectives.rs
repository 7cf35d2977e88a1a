//! Loss terms and their assembly into the four model variants.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use savp_tensor::{Element, Var};

use crate::error::{Error, Result};
use crate::layers::SpectralStore;
use crate::model::{posterior_sample, prior_latents, standard_normal, LatentTrack, Model, Variant};
use crate::params::Binder;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconNorm {
    L1,
    L2,
}

/// Global mean of `|x - y|` or `(x - y)^2`.
pub fn reconstruction<'t, F: Element>(target: &Var<'t, F>, pred: &Var<'t, F>, norm: ReconNorm) -> Result<Var<'t, F>> {
    if target.shape() != pred.shape() {
        return Err(Error::Mismatch(format!(
            "reconstruction of {:?} against {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let d = pred.sub(target)?;
    Ok(match norm {
        ReconNorm::L1 => d.abs().mean(),
        ReconNorm::L2 => d.square().mean(),
    })
}

/// `KL(N(mu, sigma^2) || N(0, 1))` summed over steps and latent dimensions,
/// averaged over the batch (leading axis).
pub fn kl_divergence<'t, F: Element>(mu: &Var<'t, F>, log_sigma: &Var<'t, F>) -> Result<Var<'t, F>> {
    if mu.shape() != log_sigma.shape() || mu.shape().is_empty() {
        return Err(Error::Mismatch(format!("kl of {:?} and {:?}", mu.shape(), log_sigma.shape())));
    }
    let batch = F::of(mu.shape()[0] as f64);
    let two_ls = log_sigma.scale(F::of(2.0));
    let per = mu.square().add(&two_ls.exp())?.sub(&two_ls)?.add_scalar(-F::one());
    Ok(per.sum().scale(F::of(0.5) / batch))
}

/// Binary cross-entropy of a discriminator on logits:
/// `mean softplus(-real) + mean softplus(fake)`.
pub fn gan_discriminator_loss<'t, F: Element>(real: &Var<'t, F>, fake: &Var<'t, F>) -> Result<Var<'t, F>> {
    Ok(real.neg().softplus().mean().add(&fake.softplus().mean())?)
}

/// Non-saturating generator loss `mean softplus(-fake) = -mean log D(fake)`.
pub fn gan_generator_loss<'t, F: Element>(fake: &Var<'t, F>) -> Var<'t, F> {
    fake.neg().softplus().mean()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_l1: f64,
    pub lambda_kl: f64,
    /// Weight on the generator's adversarial terms.
    pub lambda_gan: f64,
    /// KL weight ramps linearly from 0 to `lambda_kl` over `[start, end]`.
    pub kl_anneal: (u64, u64),
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_l1 > 0.0) || !(self.lambda_kl >= 0.0) || !(self.lambda_gan >= 0.0) {
            return Err(Error::Config(format!("invalid loss weights {self:?}")));
        }
        if self.kl_anneal.0 > self.kl_anneal.1 {
            return Err(Error::Config(format!("kl anneal window {:?} is reversed", self.kl_anneal)));
        }
        Ok(())
    }
}

pub fn kl_anneal_weight(iter: u64, w: &LossWeights) -> f64 {
    let (start, end) = w.kl_anneal;
    if iter < start {
        0.0
    } else if iter >= end {
        w.lambda_kl
    } else {
        w.lambda_kl * (iter - start) as f64 / (end - start) as f64
    }
}

/// Per-step settings the trainer supplies to [`assemble`].
#[derive(Clone, Debug)]
pub struct StepSettings {
    pub context: usize,
    pub horizon: usize,
    pub teacher_forcing: Vec<bool>,
    pub iteration: u64,
    pub weights: LossWeights,
    pub norm: ReconNorm,
    pub power_iters: usize,
}

/// Loss graph for one step. `generator` drives both G and E; `discriminator`
/// sums the losses of D and D^VAE and only depends on detached fakes.
pub struct Objective<'t, F: Element> {
    pub generator: Var<'t, F>,
    pub discriminator: Option<Var<'t, F>>,
    /// Individual terms by name, unweighted.
    pub terms: BTreeMap<&'static str, Var<'t, F>>,
    /// KL weight in effect this step.
    pub kl_weight: f64,
    pub posterior: Option<LatentTrack<'t, F>>,
    pub prior: Option<LatentTrack<'t, F>>,
}

impl<'t, F: Element> Objective<'t, F> {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.get(name).map(|v| v.value().item().to_f64())
    }

    /// Scalar values for logging, including the totals.
    pub fn values(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> =
            self.terms.iter().map(|(k, v)| (k.to_string(), v.value().item().to_f64())).collect();
        out.push(("g_total".into(), self.generator.value().item().to_f64()));
        if let Some(d) = &self.discriminator {
            out.push(("d_total".into(), d.value().item().to_f64()));
        }
        out
    }
}

/// Builds every loss term of `model`'s variant for one batch.
///
/// `video` is `[b, context + horizon, c, h, w]` ground truth and `actions`
/// `[b, steps, n_actions]` when conditioned. Random draws come from `rng` in a
/// fixed order: posterior noise, then prior codes.
pub fn assemble<'t, F: Element>(
    model: &Model,
    bind: &Binder<'_, 't, F>,
    spectral: &mut SpectralStore<F>,
    video: &Var<'t, F>,
    actions: Option<&Var<'t, F>>,
    s: &StepSettings,
    rng: &mut impl Rng,
) -> Result<Objective<'t, F>> {
    let variant = model.config.variant;
    let steps = s.context - 1 + s.horizon;
    let b = video.shape()[0];
    let nz = model.config.nz;
    let tape = bind.tape();
    let target = video.narrow(1, s.context, s.horizon)?;
    let lam = |x: f64| F::of(x);
    let kl_weight = if variant.has_encoder() {
        kl_anneal_weight(s.iteration, &s.weights)
    } else {
        0.0
    };
    let rollout = |z: Option<&Var<'t, F>>| {
        model
            .generator
            .rollout(bind, video, s.context, s.horizon, z, actions, &s.teacher_forcing)
    };

    let mut terms = BTreeMap::new();
    let posterior = match &model.encoder {
        Some(enc) => {
            let (mu, ls) = enc.posterior_track(bind, video, steps)?;
            let eps = standard_normal(rng, &[b, steps, nz]);
            Some(posterior_sample(&mu, &ls, eps)?)
        }
        None => None,
    };
    let prior = variant
        .has_discriminator()
        .then(|| prior_latents(tape, rng, b, steps, nz));

    let mut generator = None;
    let mut disc_total: Option<Var<'t, F>> = None;
    let add = |acc: Option<Var<'t, F>>, x: Var<'t, F>| -> Result<Option<Var<'t, F>>> {
        Ok(Some(match acc {
            Some(a) => a.add(&x)?,
            None => x,
        }))
    };

    if variant == Variant::Deterministic {
        let pred = rollout(None)?;
        let recon = reconstruction(&target, &pred, s.norm)?;
        generator = Some(recon.scale(lam(s.weights.lambda_l1)));
        terms.insert("recon", recon);
    }

    if let Some(post) = &posterior {
        let pred = rollout(Some(&post.z))?;
        let recon = reconstruction(&target, &pred, s.norm)?;
        let (mu, ls) = post.stats.as_ref().expect("posterior statistics");
        let kl = kl_divergence(mu, ls)?;
        let mut g = recon.scale(lam(s.weights.lambda_l1)).add(&kl.scale(lam(kl_weight)))?;
        if let Some(dv) = &model.discriminator_vae {
            let w = dv.normalized_weights(bind, spectral, s.power_iters)?;
            let fake = dv.score(bind, &w, &pred)?;
            let g_adv = gan_generator_loss(&fake);
            g = g.add(&g_adv.scale(lam(s.weights.lambda_gan)))?;
            let real = dv.score(bind, &w, &target)?;
            let d = gan_discriminator_loss(&real, &dv.score(bind, &w, &pred.detach())?)?;
            terms.insert("g_adv_vae", g_adv);
            terms.insert("d_vae", d.clone());
            disc_total = add(disc_total, d)?;
        }
        generator = add(generator, g)?;
        terms.insert("recon", recon);
        terms.insert("kl", kl);
    }

    if let (Some(pr), Some(disc)) = (&prior, &model.discriminator) {
        let pred = rollout(Some(&pr.z))?;
        let w = disc.normalized_weights(bind, spectral, s.power_iters)?;
        let fake = disc.score(bind, &w, &pred)?;
        let g_adv = gan_generator_loss(&fake);
        let mut g = g_adv.scale(lam(s.weights.lambda_gan));
        if variant == Variant::Gan {
            let recon = reconstruction(&target, &pred, s.norm)?;
            g = g.add(&recon.scale(lam(s.weights.lambda_l1)))?;
            terms.insert("recon_prior", recon);
        }
        let real = disc.score(bind, &w, &target)?;
        let d = gan_discriminator_loss(&real, &disc.score(bind, &w, &pred.detach())?)?;
        terms.insert("g_adv", g_adv);
        terms.insert("d", d.clone());
        disc_total = add(disc_total, d)?;
        generator = add(generator, g)?;
    }

    let generator = generator.ok_or_else(|| Error::Config(format!("variant {} has no generator loss", variant.name())))?;
    Ok(Objective {
        generator,
        discriminator: disc_total,
        terms,
        kl_weight,
        posterior,
        prior,
    })
}
