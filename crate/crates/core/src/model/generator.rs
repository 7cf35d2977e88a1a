use savp_tensor::{Element, Tensor, Var};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::layers::{tile_spatial, Conv, ConvLstm, FcLstm, InitRng, InstanceNorm, Linear, LstmState};
use crate::params::{Binder, ParamStore};

/// Mask components beyond the warped images: first frame, previous frame and
/// synthesised frame, in that order.
pub const MASK_EXTRA: usize = 3;

/// Three conv-LSTM levels at full, half and quarter resolution, a bilinear
/// decoder with a skip from the first level, and kernel, mask and synthesis heads.
#[derive(Clone, Debug)]
pub struct Generator {
    channels: usize,
    height: usize,
    width: usize,
    nz: usize,
    n_actions: usize,
    n_kernels: usize,
    kernel_size: usize,
    conv_in: Conv,
    norm_in: InstanceNorm,
    lstm: [ConvLstm; 3],
    dec2: Conv,
    norm2: InstanceNorm,
    dec1: Conv,
    norm1: InstanceNorm,
    synth: [Conv; 2],
    mask: [Conv; 2],
    kernel_fc: Linear,
    latent: Option<FcLstm>,
}

/// Recurrent state carried between generator steps.
#[derive(Clone, Debug)]
pub struct GenState<'t, F: Element> {
    pub first: Var<'t, F>,
    pub cells: [LstmState<'t, F>; 3],
    pub latent: Option<LstmState<'t, F>>,
}

/// Output frame plus the head activations that produced it.
#[derive(Clone, Debug)]
pub struct StepOutput<'t, F: Element> {
    /// `[b, c, h, w]`.
    pub frame: Var<'t, F>,
    /// `[b, n_kernels, k, k]`, each kernel summing to one.
    pub kernels: Var<'t, F>,
    /// `[b, n_kernels + 3, h, w]`, summing to one over components.
    pub mask: Var<'t, F>,
    /// `[b, c, h, w]` in `(0, 1)`.
    pub synth: Var<'t, F>,
}

/// Replaces head outputs with fixed values, for probing the compositing.
#[derive(Clone, Debug, Default)]
pub struct StepOverrides<F: Element> {
    pub mask: Option<Tensor<F>>,
    pub kernels: Option<Tensor<F>>,
}

fn check_finite<F: Element>(head: &'static str, v: &Var<'_, F>) -> Result<()> {
    if v.value().all_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteHead(head))
    }
}

impl Generator {
    pub fn new(name: &str, cfg: &ModelConfig) -> Self {
        let n = |s: &str| format!("{name}.{s}");
        let ngf = cfg.ngf;
        let nz = if cfg.variant.uses_latents() { cfg.nz } else { 0 };
        let cond = nz + cfg.n_actions;
        let deep = 2 * ngf * (cfg.height / 4) * (cfg.width / 4);
        Self {
            channels: cfg.channels,
            height: cfg.height,
            width: cfg.width,
            nz,
            n_actions: cfg.n_actions,
            n_kernels: cfg.n_kernels,
            kernel_size: cfg.kernel_size,
            conv_in: Conv::new(n("conv_in"), cfg.channels + cond, ngf, 3).no_bias(),
            norm_in: InstanceNorm::new(n("norm_in"), ngf),
            lstm: [
                ConvLstm::new(&n("lstm1"), ngf + cond, ngf, 3),
                ConvLstm::new(&n("lstm2"), ngf + cond, 2 * ngf, 3),
                ConvLstm::new(&n("lstm3"), 2 * ngf + cond, 2 * ngf, 3),
            ],
            dec2: Conv::new(n("dec2"), 2 * ngf + cond, 2 * ngf, 3).no_bias(),
            norm2: InstanceNorm::new(n("norm2"), 2 * ngf),
            dec1: Conv::new(n("dec1"), 2 * ngf + ngf + cond, ngf, 3).no_bias(),
            norm1: InstanceNorm::new(n("norm1"), ngf),
            synth: [
                Conv::new(n("synth1"), ngf, ngf, 3),
                Conv::new(n("synth2"), ngf, cfg.channels, 3),
            ],
            mask: [
                Conv::new(n("mask1"), ngf, ngf, 3),
                Conv::new(n("mask2"), ngf, cfg.n_kernels + MASK_EXTRA, 3),
            ],
            kernel_fc: Linear::new(n("kernel_fc"), deep, cfg.n_kernels * cfg.kernel_size * cfg.kernel_size),
            latent: (nz > 0).then(|| FcLstm::new(&n("latent_lstm"), nz, nz)),
        }
    }

    pub fn lstm_cells(&self) -> &[ConvLstm; 3] {
        &self.lstm
    }

    pub fn latent_lstm(&self) -> Option<&FcLstm> {
        self.latent.as_ref()
    }

    pub fn init<F: Element>(&self, store: &mut ParamStore<F>, rng: &mut InitRng) {
        self.conv_in.init(store, rng);
        self.norm_in.init(store);
        for cell in &self.lstm {
            cell.init(store, rng);
        }
        self.dec2.init(store, rng);
        self.norm2.init(store);
        self.dec1.init(store, rng);
        self.norm1.init(store);
        for c in self.synth.iter().chain(&self.mask) {
            c.init(store, rng);
        }
        self.kernel_fc.init(store, rng);
        if let Some(l) = &self.latent {
            l.init(store, rng);
        }
    }

    pub fn initial_state<'t, F: Element>(&self, bind: &Binder<'_, 't, F>, first: &Var<'t, F>) -> GenState<'t, F> {
        let b = first.shape()[0];
        let (h, w) = (self.height, self.width);
        GenState {
            first: first.clone(),
            cells: [
                self.lstm[0].zero_state(bind, b, h, w),
                self.lstm[1].zero_state(bind, b, h / 2, w / 2),
                self.lstm[2].zero_state(bind, b, h / 4, w / 4),
            ],
            latent: self.latent.as_ref().map(|l| l.zero_state(bind, b)),
        }
    }

    /// Predicts the next frame from `prev`. `z` is required unless the
    /// variant is deterministic (then it is ignored); `action` is required
    /// exactly when the model is action-conditioned.
    pub fn step<'t, F: Element>(
        &self,
        bind: &Binder<'_, 't, F>,
        state: &mut GenState<'t, F>,
        prev: &Var<'t, F>,
        z: Option<&Var<'t, F>>,
        action: Option<&Var<'t, F>>,
        overrides: Option<&StepOverrides<F>>,
    ) -> Result<StepOutput<'t, F>> {
        let (c, h, w) = (self.channels, self.height, self.width);
        let b = prev.shape()[0];
        if prev.shape() != [b, c, h, w] {
            return Err(Error::Mismatch(format!("frame {:?}, expected [b, {c}, {h}, {w}]", prev.shape())));
        }
        let mut cond_parts = Vec::new();
        if let (Some(lstm), Some(st)) = (&self.latent, state.latent.as_ref()) {
            let z = z.ok_or_else(|| Error::Mismatch("latent code required".into()))?;
            if z.shape() != [b, self.nz] {
                return Err(Error::Mismatch(format!("latent {:?}, expected [{b}, {}]", z.shape(), self.nz)));
            }
            let next = lstm.step(bind, z, st)?;
            cond_parts.push(next.h.clone());
            state.latent = Some(next);
        }
        if self.n_actions > 0 {
            let a = action.ok_or_else(|| Error::Mismatch("action required".into()))?;
            if a.shape() != [b, self.n_actions] {
                return Err(Error::Mismatch(format!("action {:?}, expected [{b}, {}]", a.shape(), self.n_actions)));
            }
            cond_parts.push(a.clone());
        }
        let cond = if cond_parts.is_empty() {
            None
        } else {
            Some(Var::concat(&cond_parts.iter().collect::<Vec<_>>(), 1)?)
        };
        let with_cond = |x: &Var<'t, F>, extra: &[&Var<'t, F>]| -> Result<Var<'t, F>> {
            let tiled;
            let mut parts = vec![x];
            parts.extend_from_slice(extra);
            if let Some(cv) = &cond {
                tiled = tile_spatial(cv, x.shape()[2], x.shape()[3])?;
                parts.push(&tiled);
            }
            if parts.len() == 1 {
                Ok(x.clone())
            } else {
                Ok(Var::concat(&parts, 1)?)
            }
        };

        let e0 = self.norm_in.forward(bind, &self.conv_in.forward(bind, &with_cond(prev, &[])?)?)?.relu();
        let s1 = self.lstm[0].step(bind, &with_cond(&e0, &[])?, &state.cells[0])?;
        let p1 = s1.h.avg_pool2d(2)?;
        let s2 = self.lstm[1].step(bind, &with_cond(&p1, &[])?, &state.cells[1])?;
        let p2 = s2.h.avg_pool2d(2)?;
        let s3 = self.lstm[2].step(bind, &with_cond(&p2, &[])?, &state.cells[2])?;

        let up3 = s3.h.upsample_bilinear2d(2)?;
        let d2 = self.norm2.forward(bind, &self.dec2.forward(bind, &with_cond(&up3, &[])?)?)?.relu();
        let up2 = d2.upsample_bilinear2d(2)?;
        let d1 = self.norm1.forward(bind, &self.dec1.forward(bind, &with_cond(&up2, &[&s1.h])?)?)?.relu();

        let synth = self.synth[1].forward(bind, &self.synth[0].forward(bind, &d1)?.relu())?.sigmoid();
        check_finite("synthesis", &synth)?;

        let n_comp = self.n_kernels + MASK_EXTRA;
        let mask = match overrides.and_then(|o| o.mask.as_ref()) {
            Some(m) => {
                if m.shape() != [b, n_comp, h, w] {
                    return Err(Error::Mismatch(format!("mask override {:?}", m.shape())));
                }
                bind.tape().constant(m.clone())
            }
            None => self.mask[1].forward(bind, &self.mask[0].forward(bind, &d1)?.relu())?.softmax(1)?,
        };
        check_finite("mask", &mask)?;

        let k = self.kernel_size;
        let kernels = match overrides.and_then(|o| o.kernels.as_ref()) {
            Some(kt) => {
                if kt.shape() != [b, self.n_kernels, k, k] {
                    return Err(Error::Mismatch(format!("kernel override {:?}", kt.shape())));
                }
                bind.tape().constant(kt.clone())
            }
            None => {
                let flat = s3.h.reshape([b, s3.h.value().numel() / b])?;
                self.kernel_fc
                    .forward(bind, &flat)?
                    .reshape([b, self.n_kernels, k * k])?
                    .softmax(2)?
                    .reshape([b, self.n_kernels, k, k])?
            }
        };
        check_finite("kernel", &kernels)?;

        let warped = prev.warp_kernels(&kernels)?;
        let one = |x: &Var<'t, F>| x.reshape([b, 1, c, h, w]);
        let candidates = Var::concat(&[&warped, &one(&state.first)?, &one(prev)?, &one(&synth)?], 1)?;
        let frame = candidates.mul(&mask.reshape([b, n_comp, 1, h, w])?)?.sum_axis(1)?;

        state.cells = [s1, s2, s3];
        Ok(StepOutput {
            frame,
            kernels,
            mask,
            synth,
        })
    }

    /// Rolls out `context - 1 + horizon` steps over `video` (`[b, n, c, h, w]`)
    /// and returns the `horizon` frames after the context, `[b, horizon, c, h, w]`.
    ///
    /// Step `t` consumes frame `t` and predicts frame `t + 1`. Frames before
    /// `context` are always ground truth; later ones are ground truth where
    /// `teacher_forcing[t]` is set and the previous prediction otherwise.
    /// `latents` is `[b, steps, nz]` and `actions` `[b, steps, n_actions]`.
    #[allow(clippy::too_many_arguments)]
    pub fn rollout<'t, F: Element>(
        &self,
        bind: &Binder<'_, 't, F>,
        video: &Var<'t, F>,
        context: usize,
        horizon: usize,
        latents: Option<&Var<'t, F>>,
        actions: Option<&Var<'t, F>>,
        teacher_forcing: &[bool],
    ) -> Result<Var<'t, F>> {
        if context == 0 || horizon == 0 {
            return Err(Error::Config("context and horizon must be positive".into()));
        }
        let steps = context - 1 + horizon;
        let vs = video.shape().to_vec();
        if vs.len() != 5 || vs[1] < context {
            return Err(Error::Mismatch(format!("video {vs:?} shorter than context {context}")));
        }
        if teacher_forcing.len() != steps {
            return Err(Error::Mismatch(format!(
                "{} teacher-forcing flags for {steps} steps",
                teacher_forcing.len()
            )));
        }
        let b = vs[0];
        let per_step = |seq: Option<&Var<'t, F>>, what: &str, width: usize| -> Result<Option<Var<'t, F>>> {
            match seq {
                Some(s) if s.shape() != [b, steps, width] => Err(Error::Mismatch(format!(
                    "{what} track {:?}, expected [{b}, {steps}, {width}]",
                    s.shape()
                ))),
                other => Ok(other.cloned()),
            }
        };
        let latents = if self.latent.is_some() {
            Some(per_step(latents, "latent", self.nz)?.ok_or_else(|| Error::Mismatch("latent track required".into()))?)
        } else {
            None
        };
        let actions = per_step(actions, "action", self.n_actions)?;
        let frame_at = |t: usize| -> Result<Var<'t, F>> {
            if t >= vs[1] {
                return Err(Error::Mismatch(format!("ground-truth frame {t} requested from {} frames", vs[1])));
            }
            Ok(video.narrow(1, t, 1)?.reshape([b, vs[2], vs[3], vs[4]])?)
        };
        let slice = |s: &Var<'t, F>, t: usize| -> Result<Var<'t, F>> {
            let n = s.shape()[2];
            Ok(s.narrow(1, t, 1)?.reshape([b, n])?)
        };

        let mut state = self.initial_state(bind, &frame_at(0)?);
        let mut last: Option<Var<'t, F>> = None;
        let mut outputs = Vec::with_capacity(horizon);
        for t in 0..steps {
            let input = match &last {
                Some(pred) if t >= context && !teacher_forcing[t] => pred.clone(),
                _ => frame_at(t)?,
            };
            let z = latents.as_ref().map(|l| slice(l, t)).transpose()?;
            let a = actions.as_ref().map(|a| slice(a, t)).transpose()?;
            let out = self.step(bind, &mut state, &input, z.as_ref(), a.as_ref(), None)?;
            if t + 1 >= context {
                outputs.push(out.frame.reshape([b, 1, vs[2], vs[3], vs[4]])?);
            }
            last = Some(out.frame);
        }
        Ok(Var::concat(&outputs.iter().collect::<Vec<_>>(), 1)?)
    }
}
