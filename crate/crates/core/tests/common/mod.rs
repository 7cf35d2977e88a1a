#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use savp::layers::{power_iterate, SpectralStore};
use savp::model::{Model, ModelConfig, Variant};
use savp::objectives::{assemble, LossWeights, ReconNorm, StepSettings};
use savp::params::{Binder, ParamStore};
use savp_tensor::{Tape, Tensor, Var};

/// Small model used by gradient and property tests.
pub fn tiny_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        channels: 1,
        height: 12,
        width: 12,
        ngf: 3,
        nz: 2,
        n_kernels: 2,
        kernel_size: 3,
        n_actions: 0,
        nef: 2,
        ndf: 2,
    }
}

pub fn tiny_model(cfg: ModelConfig, seed: u64) -> (Model, ParamStore<f64>, SpectralStore<f64>) {
    let model = Model::new(cfg).unwrap();
    let (params, spectral) = model.init(&mut ChaCha8Rng::seed_from_u64(seed));
    (model, params, spectral)
}

/// Uniform [0, 1) video `[b, t, c, h, w]`.
pub fn random_video(shape: [usize; 5], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

#[derive(Debug)]
pub struct ParamCheck {
    pub max_rel_error: f64,
    pub worst: (String, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Probes with a ReLU corner within `h`, where a smaller central step
    /// meets `tol`.
    pub kinks: usize,
}

/// Adds `U(-amp, amp)` to every parameter so checks run away from the
/// exact-zero biases of a fresh initialisation.
pub fn jitter(store: &mut ParamStore<f64>, seed: u64, amp: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, t) in store.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-amp..amp));
    }
}

/// Central-difference check of `loss` with respect to parameters whose name
/// starts with one of `prefixes`, probing up to `per_tensor` evenly spaced
/// elements of each tensor. Probes above `tol` whose interval straddles a
/// ReLU corner are re-checked with a smaller step and counted in `kinks`.
pub fn check_param_gradients<L>(
    store: &ParamStore<f64>,
    prefixes: &[&str],
    per_tensor: usize,
    h: f64,
    floor: f64,
    tol: f64,
    loss: L,
) -> ParamCheck
where
    L: for<'s, 't> Fn(&Binder<'s, 't, f64>) -> Var<'t, f64>,
{
    let grads = {
        let tape = Tape::new();
        let bind = Binder::new(store, &tape);
        let l = loss(&bind);
        let g = tape.backward(&l).unwrap();
        prefixes
            .iter()
            .flat_map(|p| bind.grads(&g, p))
            .collect::<std::collections::BTreeMap<_, _>>()
    };
    let eval = |s: &ParamStore<f64>| {
        let tape = Tape::new();
        let bind = Binder::frozen(s, &tape);
        loss(&bind).value().item()
    };
    let mut probe = store.clone();
    let mut report = ParamCheck {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        kinks: 0,
    };
    for (name, g) in &grads {
        let n = g.numel();
        let picks: Vec<usize> = (0..per_tensor.min(n)).map(|k| k * n / per_tensor.min(n) + (n / per_tensor.max(1)) / 2).map(|i| i.min(n - 1)).collect();
        for j in picks {
            let orig = store.get(name).unwrap().data()[j];
            probe.get_mut(name).unwrap().data_mut()[j] = orig + h;
            let up = eval(&probe);
            probe.get_mut(name).unwrap().data_mut()[j] = orig - h;
            let down = eval(&probe);
            probe.get_mut(name).unwrap().data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = g.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > tol {
                // Near a ReLU corner the central difference straddles the
                // kink; smaller steps must then converge to the analytic value.
                let at = |d: f64, p: &mut ParamStore<f64>| {
                    p.get_mut(name).unwrap().data_mut()[j] = orig + d;
                    let v = eval(p);
                    p.get_mut(name).unwrap().data_mut()[j] = orig;
                    v
                };
                let refined = [h / 10.0, h / 100.0].into_iter().any(|step| {
                    let n = (at(step, &mut probe) - at(-step, &mut probe)) / (2.0 * step);
                    (a - n).abs() / a.abs().max(n.abs()).max(floor) <= tol
                });
                if refined {
                    report.kinks += 1;
                    continue;
                }
            }
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst = (name.clone(), j);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report
}

pub const CONTEXT: usize = 2;
pub const HORIZON: usize = 3;

pub fn step_settings(norm: ReconNorm) -> StepSettings {
    StepSettings {
        context: CONTEXT,
        horizon: HORIZON,
        teacher_forcing: vec![true, false, true, false],
        iteration: 5,
        weights: LossWeights { lambda_l1: 100.0, lambda_kl: 0.1, lambda_gan: 1.0, kl_anneal: (0, 10) },
        norm,
        power_iters: 1,
    }
}

/// Spectral vectors run to convergence on the current weights.
pub fn converged(params: &ParamStore<f64>, spectral: &SpectralStore<f64>) -> SpectralStore<f64> {
    let mut out = spectral.clone();
    for (name, state) in out.iter_mut() {
        power_iterate(params.get(name).unwrap(), state, 2000).unwrap();
    }
    out
}

/// Generator/encoder loss, or the discriminator loss, of one training step.
pub fn objective<'t>(
    model: &Model,
    spectral: &SpectralStore<f64>,
    video: &Tensor<f64>,
    s: &StepSettings,
    bind: &Binder<'_, 't, f64>,
    discriminator: bool,
) -> Var<'t, f64> {
    let mut sp = spectral.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let v = bind.tape().constant(video.clone());
    let o = assemble(model, bind, &mut sp, &v, None, s, &mut rng).unwrap();
    if discriminator {
        o.discriminator.unwrap()
    } else {
        o.generator
    }
}

/// Parameter gradient checks of the full one-step losses of `variant` at a
/// jittered point, labelled by the network group they cover.
pub fn full_loss_checks(variant: Variant) -> Vec<(&'static str, ParamCheck)> {
    let (model, mut params, spectral) = tiny_model(tiny_config(variant), 31);
    jitter(&mut params, 30, 0.05);
    let spectral = converged(&params, &spectral);
    let video = random_video([2, CONTEXT + HORIZON, 1, 12, 12], 32);
    let s = step_settings(ReconNorm::L2);
    let mut out = vec![(
        "generator",
        check_param_gradients(&params, &["gen.", "enc."], 3, 1e-5, 1e-3, 1e-4, |b| objective(&model, &spectral, &video, &s, b, false)),
    )];
    if variant.has_discriminator() {
        out.push((
            "discriminator",
            check_param_gradients(&params, &["disc.", "disc_vae."], 3, 1e-5, 1e-3, 1e-4, |b| objective(&model, &spectral, &video, &s, b, true)),
        ));
    }
    out
}

/// Local statistics computed directly over each 2-d window.
pub fn direct_ssim(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    let (k, sigma) = (7usize, 1.5f64);
    let mid = 3.0;
    let mut win = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let r2 = (i as f64 - mid).powi(2) + (j as f64 - mid).powi(2);
            win[i * k + j] = (-r2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let z: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= z);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for oy in 0..=h - k {
        for ox in 0..=w - k {
            let at = |img: &[f64], i: usize, j: usize| img[(oy + i) * w + ox + j];
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    mx += win[i * k + j] * at(x, i, j);
                    my += win[i * k + j] * at(y, i, j);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let (dx, dy) = (at(x, i, j) - mx, at(y, i, j) - my);
                    vx += win[i * k + j] * dx * dx;
                    vy += win[i * k + j] * dy * dy;
                    cxy += win[i * k + j] * dx * dy;
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}
