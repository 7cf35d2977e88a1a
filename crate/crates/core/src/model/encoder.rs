use savp_tensor::{Element, Var};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::layers::{global_mean, Conv, InitRng, InstanceNorm, Linear};
use crate::params::{Binder, ParamStore};

/// log sigma is clamped to this magnitude.
pub const LOG_SIGMA_LIMIT: f64 = 10.0;

/// Approximate posterior over the latent code of one frame transition.
#[derive(Clone, Debug)]
pub struct Encoder {
    channels: usize,
    convs: [Conv; 3],
    norms: [InstanceNorm; 3],
    mu: Linear,
    log_sigma: Linear,
}

impl Encoder {
    pub fn new(name: &str, cfg: &ModelConfig) -> Self {
        let n = |s: &str| format!("{name}.{s}");
        let w = cfg.nef;
        let widths = [2 * cfg.channels, w, 2 * w, 4 * w];
        let conv = |i: usize| Conv::new(n(&format!("conv{}", i + 1)), widths[i], widths[i + 1], 3).stride(2).no_bias();
        let norm = |i: usize| InstanceNorm::new(n(&format!("norm{}", i + 1)), widths[i + 1]);
        Self {
            channels: cfg.channels,
            convs: [conv(0), conv(1), conv(2)],
            norms: [norm(0), norm(1), norm(2)],
            mu: Linear::new(n("mu"), 4 * w, cfg.nz),
            log_sigma: Linear::new(n("log_sigma"), 4 * w, cfg.nz),
        }
    }

    pub fn init<F: Element>(&self, store: &mut ParamStore<F>, rng: &mut InitRng) {
        for (c, n) in self.convs.iter().zip(&self.norms) {
            c.init(store, rng);
            n.init(store);
        }
        self.mu.init(store, rng);
        self.log_sigma.init(store, rng);
    }

    /// `(mu, log_sigma)`, each `[b, nz]`, for frame pairs `[b, c, h, w]`.
    pub fn posterior<'t, F: Element>(
        &self,
        bind: &Binder<'_, 't, F>,
        x_t: &Var<'t, F>,
        x_next: &Var<'t, F>,
    ) -> Result<(Var<'t, F>, Var<'t, F>)> {
        if x_t.shape() != x_next.shape() || x_t.shape().len() != 4 || x_t.shape()[1] != self.channels {
            return Err(Error::Mismatch(format!(
                "encoder frames {:?} and {:?}",
                x_t.shape(),
                x_next.shape()
            )));
        }
        let mut h = Var::concat(&[x_t, x_next], 1)?;
        for (c, n) in self.convs.iter().zip(&self.norms) {
            h = n.forward(bind, &c.forward(bind, &h)?)?.leaky_relu(F::of(0.2));
        }
        let pooled = global_mean(&h)?;
        let mu = self.mu.forward(bind, &pooled)?;
        let lim = F::of(LOG_SIGMA_LIMIT);
        let log_sigma = self.log_sigma.forward(bind, &pooled)?.clamp(-lim, lim);
        Ok((mu, log_sigma))
    }

    /// Posterior for every adjacent pair of the first `steps + 1` frames of
    /// `video` (`[b, n, c, h, w]`); returns `[b, steps, nz]` twice.
    pub fn posterior_track<'t, F: Element>(
        &self,
        bind: &Binder<'_, 't, F>,
        video: &Var<'t, F>,
        steps: usize,
    ) -> Result<(Var<'t, F>, Var<'t, F>)> {
        let s = video.shape().to_vec();
        if s.len() != 5 || s[1] < steps + 1 {
            return Err(Error::Mismatch(format!("video {s:?} too short for {steps} posterior steps")));
        }
        let flat = |start| -> Result<Var<'t, F>> {
            Ok(video.narrow(1, start, steps)?.reshape([s[0] * steps, s[2], s[3], s[4]])?)
        };
        let (mu, ls) = self.posterior(bind, &flat(0)?, &flat(1)?)?;
        let nz = mu.shape()[1];
        Ok((mu.reshape([s[0], steps, nz])?, ls.reshape([s[0], steps, nz])?))
    }
}
