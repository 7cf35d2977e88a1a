//! Generator, encoder and video discriminators.

mod discriminator;
mod encoder;
mod generator;
mod latent;

pub use discriminator::{DiscWeights, Discriminator, MIN_FRAMES};
pub use encoder::Encoder;
pub use generator::{GenState, Generator, StepOutput, StepOverrides, MASK_EXTRA};
pub use latent::{posterior_sample, prior_latents, standard_normal, LatentSource, LatentTrack};

use serde::{Deserialize, Serialize};
use savp_tensor::Element;

use crate::error::{Error, Result};
use crate::layers::{InitRng, SpectralStore};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Deterministic,
    Vae,
    Gan,
    Savp,
}

impl Variant {
    pub fn has_encoder(self) -> bool {
        matches!(self, Variant::Vae | Variant::Savp)
    }

    pub fn has_discriminator(self) -> bool {
        matches!(self, Variant::Gan | Variant::Savp)
    }

    /// Whether the generator reads latent codes at all.
    pub fn uses_latents(self) -> bool {
        self != Variant::Deterministic
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Deterministic => "deterministic",
            Variant::Vae => "vae",
            Variant::Gan => "gan",
            Variant::Savp => "savp",
        }
    }
}

/// Architecture sizes. Frames are `[channels, height, width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Base generator width.
    pub ngf: usize,
    /// Latent size.
    pub nz: usize,
    pub n_kernels: usize,
    pub kernel_size: usize,
    /// Action size, 0 when unconditioned.
    pub n_actions: usize,
    /// Base encoder width.
    pub nef: usize,
    /// Base discriminator width.
    pub ndf: usize,
}

impl ModelConfig {
    pub fn desk(variant: Variant) -> Self {
        Self {
            variant,
            channels: 1,
            height: 16,
            width: 16,
            ngf: 8,
            nz: 8,
            n_kernels: 6,
            kernel_size: 5,
            n_actions: 0,
            nef: 8,
            ndf: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.height % 4 != 0 || self.width % 4 != 0 || self.height < 8 || self.width < 8 {
            return bad(format!(
                "frame size {}x{} must be a multiple of 4 and at least 8",
                self.height, self.width
            ));
        }
        // Three stride-2 convolutions must leave at least two positions to normalise.
        let enc_out = |n: usize| (0..3).fold(n, |n, _| n.div_ceil(2));
        if self.variant.has_encoder() && enc_out(self.height) * enc_out(self.width) < 2 {
            return bad(format!(
                "frame size {}x{} is too small for the encoder",
                self.height, self.width
            ));
        }
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel size {} must be odd", self.kernel_size));
        }
        if [self.channels, self.ngf, self.n_kernels, self.kernel_size, self.nef, self.ndf].contains(&0) {
            return bad("model sizes must be positive".into());
        }
        if self.variant.uses_latents() && self.nz == 0 {
            return bad(format!("variant {} needs a positive latent size", self.variant.name()));
        }
        Ok(())
    }
}

/// All networks of one variant. Absent components are `None`.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub generator: Generator,
    pub encoder: Option<Encoder>,
    pub discriminator: Option<Discriminator>,
    /// Second discriminator scoring posterior-code rollouts (savp only).
    pub discriminator_vae: Option<Discriminator>,
}

pub const GEN: &str = "gen";
pub const ENC: &str = "enc";
pub const DISC: &str = "disc";
pub const DISC_VAE: &str = "disc_vae";

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let v = config.variant;
        Ok(Self {
            generator: Generator::new(GEN, &config),
            encoder: v.has_encoder().then(|| Encoder::new(ENC, &config)),
            discriminator: v.has_discriminator().then(|| Discriminator::new(DISC, &config)),
            discriminator_vae: (v == Variant::Savp).then(|| Discriminator::new(DISC_VAE, &config)),
            config,
        })
    }

    /// Fresh parameters and spectral vectors, drawn in a fixed order from `rng`.
    pub fn init<F: Element>(&self, rng: &mut InitRng) -> (ParamStore<F>, SpectralStore<F>) {
        let mut store = ParamStore::new();
        let mut spectral = SpectralStore::new();
        self.generator.init(&mut store, rng);
        if let Some(e) = &self.encoder {
            e.init(&mut store, rng);
        }
        for d in [&self.discriminator, &self.discriminator_vae].into_iter().flatten() {
            d.init(&mut store, &mut spectral, rng);
        }
        (store, spectral)
    }
}
