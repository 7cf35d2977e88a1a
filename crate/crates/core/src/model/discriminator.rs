use savp_tensor::{Element, Var};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::layers::{global_mean, power_iterate, spectral_normalize, Conv, InitRng, Linear, SpectralState, SpectralStore};
use crate::params::{Binder, ParamStore};

/// Minimum number of frames: the temporal extent of the first 3D kernel.
pub const MIN_FRAMES: usize = 3;
/// Power iterations run on the freshly initialised weights.
pub const WARM_START_ITERS: usize = 500;

/// Spectrally normalised 3D conv stack scoring whole videos.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub name: String,
    channels: usize,
    convs: [Conv; 4],
    head: Linear,
}

/// Normalised weights for one training step, shared by every video scored in it.
pub struct DiscWeights<'t, F: Element> {
    convs: Vec<Var<'t, F>>,
    head: Var<'t, F>,
}

impl<'t, F: Element> DiscWeights<'t, F> {
    /// The effective (normalised) weight tensors, convolutions first.
    pub fn tensors(&self) -> Vec<&Var<'t, F>> {
        self.convs.iter().chain(std::iter::once(&self.head)).collect()
    }
}

impl Discriminator {
    pub fn new(name: &str, cfg: &ModelConfig) -> Self {
        let n = |s: &str| format!("{name}.{s}");
        let d = cfg.ndf;
        let conv = |i: usize, cin, cout, stride| Conv::new(n(&format!("conv{i}")), cin, cout, 3).stride(stride).three_d();
        Self {
            name: name.into(),
            channels: cfg.channels,
            convs: [
                conv(1, cfg.channels, d, 1),
                conv(2, d, 2 * d, 2),
                conv(3, 2 * d, 2 * d, 1),
                conv(4, 2 * d, 4 * d, 2),
            ],
            head: Linear::new(n("head"), 4 * d, 1),
        }
    }

    fn weight_names(&self) -> Vec<String> {
        self.convs
            .iter()
            .map(Conv::weight_name)
            .chain(std::iter::once(self.head.weight_name()))
            .collect()
    }

    pub fn init<F: Element>(&self, store: &mut ParamStore<F>, spectral: &mut SpectralStore<F>, rng: &mut InitRng) {
        for c in &self.convs {
            c.init(store, rng);
        }
        self.head.init(store, rng);
        for name in self.weight_names() {
            let w = store.get(&name).expect("just inserted");
            let mut state = SpectralState::init(w.shape(), rng);
            // Warm start: the vectors persist across steps, so converge them
            // once on the initial weights.
            power_iterate(w, &mut state, WARM_START_ITERS).expect("initial weights are nonzero");
            spectral.insert(name, state);
        }
    }

    /// Runs `power_iters` power-iteration rounds per weight and returns the
    /// normalised weights on the tape.
    pub fn normalized_weights<'t, F: Element>(
        &self,
        bind: &Binder<'_, 't, F>,
        spectral: &mut SpectralStore<F>,
        power_iters: usize,
    ) -> Result<DiscWeights<'t, F>> {
        let mut out = Vec::new();
        for name in self.weight_names() {
            let state = spectral
                .get_mut(&name)
                .ok_or_else(|| Error::MissingParam(format!("{name} (spectral state)")))?;
            out.push(spectral_normalize(&bind.param(&name)?, state, power_iters)?);
        }
        let head = out.pop().expect("head weight");
        Ok(DiscWeights { convs: out, head })
    }

    /// One logit per video of `[b, t, c, h, w]`, shape `[b]`.
    pub fn score<'t, F: Element>(
        &self,
        bind: &Binder<'_, 't, F>,
        weights: &DiscWeights<'t, F>,
        video: &Var<'t, F>,
    ) -> Result<Var<'t, F>> {
        let s = video.shape();
        if s.len() != 5 || s[2] != self.channels {
            return Err(Error::Mismatch(format!("discriminator input {s:?}")));
        }
        if s[1] < MIN_FRAMES {
            return Err(Error::Mismatch(format!(
                "discriminator needs at least {MIN_FRAMES} frames, got {}",
                s[1]
            )));
        }
        let b = s[0];
        let mut h = video.permute(&[0, 2, 1, 3, 4])?;
        for (conv, w) in self.convs.iter().zip(&weights.convs) {
            h = conv.forward_with(bind, &h, w)?.leaky_relu(F::of(0.1));
        }
        let logits = self.head.forward_with(bind, &global_mean(&h)?, &weights.head)?;
        Ok(logits.reshape([b])?)
    }
}
