mod common;

use common::{random_video, tiny_config, tiny_model};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use savp::model::{posterior_sample, prior_latents, standard_normal, StepOverrides, Variant, MASK_EXTRA};
use savp::params::Binder;
use savp::Error;
use savp_tensor::gradcheck::{check_gradients, probe};
use savp_tensor::{Tape, Tensor};

fn frame(video: &Tensor<f64>, b: usize, t: usize) -> Tensor<f64> {
    let s = video.shape();
    video.narrow(1, t, 1).unwrap().reshape([b, s[2], s[3], s[4]]).unwrap()
}

#[test]
fn one_hot_mask_on_previous_frame_copies_it() {
    let cfg = tiny_config(Variant::Savp);
    let (model, params, _) = tiny_model(cfg.clone(), 1);
    let video = random_video([2, 3, 1, 12, 12], 2);
    let n_comp = cfg.n_kernels + MASK_EXTRA;
    let mut mask = Tensor::zeros([2, n_comp, 12, 12]);
    let plane = 144;
    for b in 0..2 {
        let base = (b * n_comp + cfg.n_kernels + 1) * plane;
        mask.data_mut()[base..base + plane].fill(1.0);
    }
    let tape = Tape::new();
    let bind = Binder::new(&params, &tape);
    let first = tape.constant(frame(&video, 2, 0));
    let prev = tape.constant(frame(&video, 2, 1));
    let mut state = model.generator.initial_state(&bind, &first);
    let z = tape.constant(Tensor::ones([2, cfg.nz]));
    let over = StepOverrides { mask: Some(mask), kernels: None };
    let out = model.generator.step(&bind, &mut state, &prev, Some(&z), None, Some(&over)).unwrap();
    assert_eq!(out.frame.value(), prev.value());
}

#[test]
fn delta_kernel_warp_copies_previous_frame() {
    let cfg = tiny_config(Variant::Vae);
    let (model, params, _) = tiny_model(cfg.clone(), 3);
    let video = random_video([1, 2, 1, 12, 12], 4);
    let (k, nk) = (cfg.kernel_size, cfg.n_kernels);
    let mut kernels = Tensor::zeros([1, nk, k, k]);
    kernels.data_mut()[k * k / 2] = 1.0;
    let mut mask = Tensor::zeros([1, nk + MASK_EXTRA, 12, 12]);
    mask.data_mut()[..144].fill(1.0);
    let tape = Tape::new();
    let bind = Binder::new(&params, &tape);
    let first = tape.constant(frame(&video, 1, 0));
    let prev = tape.constant(frame(&video, 1, 1));
    let mut state = model.generator.initial_state(&bind, &first);
    let z = tape.constant(Tensor::zeros([1, cfg.nz]));
    let over = StepOverrides { mask: Some(mask), kernels: Some(kernels) };
    let out = model.generator.step(&bind, &mut state, &prev, Some(&z), None, Some(&over)).unwrap();
    assert_eq!(out.frame.value(), prev.value());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn heads_are_normalised_and_frames_stay_in_range(seed in 0u64..10_000) {
        let cfg = tiny_config(Variant::Savp);
        let (model, params, _) = tiny_model(cfg.clone(), seed);
        let video = random_video([2, 2, 1, 12, 12], seed + 1);
        let tape = Tape::new();
        let bind = Binder::new(&params, &tape);
        let mut state = model.generator.initial_state(&bind, &tape.constant(frame(&video, 2, 0)));
        let z = tape.constant(standard_normal(&mut ChaCha8Rng::seed_from_u64(seed), &[2, cfg.nz]));
        let out = model.generator.step(&bind, &mut state, &tape.constant(frame(&video, 2, 1)), Some(&z), None, None).unwrap();
        let n_comp = cfg.n_kernels + MASK_EXTRA;
        let m = out.mask.value().data();
        for b in 0..2 {
            for p in 0..144 {
                let s: f64 = (0..n_comp).map(|i| m[(b * n_comp + i) * 144 + p]).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }
        let kk = cfg.kernel_size * cfg.kernel_size;
        for kernel in out.kernels.value().data().chunks(kk) {
            prop_assert!(kernel.iter().all(|&v| v >= 0.0));
            prop_assert!((kernel.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        prop_assert!(out.frame.value().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn encoder_output_shape_is_resolution_free(side in prop::sample::select(vec![12usize, 16, 20, 24, 32]), b in 1usize..3) {
        let (model, params, _) = tiny_model(tiny_config(Variant::Vae), 0);
        let enc = model.encoder.as_ref().unwrap();
        let tape = Tape::new();
        let bind = Binder::new(&params, &tape);
        let x = tape.constant(random_video([b, 1, 1, side, side], 1).reshape([b, 1, side, side]).unwrap());
        let y = tape.constant(random_video([b, 1, 1, side, side], 2).reshape([b, 1, side, side]).unwrap());
        let (mu, ls) = enc.posterior(&bind, &x, &y).unwrap();
        prop_assert_eq!(mu.shape(), &[b, 2]);
        prop_assert_eq!(ls.shape(), &[b, 2]);
    }
}

#[test]
fn single_teacher_forced_step_matches_generator_step() {
    let cfg = tiny_config(Variant::Savp);
    let (model, params, _) = tiny_model(cfg.clone(), 7);
    let video = random_video([2, 2, 1, 12, 12], 8);
    let tape = Tape::new();
    let bind = Binder::new(&params, &tape);
    let v = tape.constant(video.clone());
    let z = tape.constant(standard_normal(&mut ChaCha8Rng::seed_from_u64(1), &[2, 1, cfg.nz]));
    let rolled = model.generator.rollout(&bind, &v, 1, 1, Some(&z), None, &[true]).unwrap();
    let first = tape.constant(frame(&video, 2, 0));
    let mut state = model.generator.initial_state(&bind, &first);
    let z0 = z.reshape([2, cfg.nz]).unwrap();
    let out = model.generator.step(&bind, &mut state, &first, Some(&z0), None, None).unwrap();
    assert_eq!(rolled.value().data(), out.frame.value().data());
}

#[test]
fn rollouts_are_deterministic_and_extend_past_training_horizon() {
    let cfg = tiny_config(Variant::Savp);
    let (model, params, _) = tiny_model(cfg.clone(), 9);
    let video = random_video([1, 2, 1, 12, 12], 10);
    let run = || {
        let tape = Tape::new();
        let bind = Binder::new(&params, &tape);
        let z = prior_latents(&tape, &mut ChaCha8Rng::seed_from_u64(5), 1, 13, cfg.nz);
        let out = model
            .generator
            .rollout(&bind, &tape.constant(video.clone()), 2, 12, Some(&z.z), None, &[false; 13])
            .unwrap();
        out.value().clone()
    };
    let a = run();
    assert_eq!(a.shape(), &[1, 12, 1, 12, 12]);
    assert_eq!(a, run());
}

#[test]
fn deterministic_variant_ignores_latents() {
    let cfg = tiny_config(Variant::Deterministic);
    let (model, params, _) = tiny_model(cfg.clone(), 11);
    let video = random_video([2, 4, 1, 12, 12], 12);
    let run = |seed: u64| {
        let tape = Tape::new();
        let bind = Binder::new(&params, &tape);
        let z = prior_latents(&tape, &mut ChaCha8Rng::seed_from_u64(seed), 2, 3, cfg.nz);
        let out = model
            .generator
            .rollout(&bind, &tape.constant(video.clone()), 2, 2, Some(&z.z), None, &[false; 3])
            .unwrap();
        out.value().clone()
    };
    assert_eq!(run(1), run(2));
}

#[test]
fn latent_count_mismatch_is_an_error() {
    let cfg = tiny_config(Variant::Vae);
    let (model, params, _) = tiny_model(cfg.clone(), 1);
    let tape = Tape::new();
    let bind = Binder::new(&params, &tape);
    let v = tape.constant(random_video([1, 4, 1, 12, 12], 1));
    let z = tape.constant(Tensor::zeros([1, 2, cfg.nz]));
    let err = model.generator.rollout(&bind, &v, 2, 2, Some(&z), None, &[false; 3]).unwrap_err();
    assert!(matches!(err, Error::Mismatch(_)), "{err}");
    let err = model.generator.rollout(&bind, &v, 2, 2, None, None, &[false; 3]).unwrap_err();
    assert!(matches!(err, Error::Mismatch(_)), "{err}");
}

#[test]
fn non_finite_synthesis_head_is_named() {
    let cfg = tiny_config(Variant::Deterministic);
    let (model, mut params, _) = tiny_model(cfg, 1);
    let name = params.names().find(|n| n.contains("synth2")).unwrap().clone();
    params.get_mut(&name).unwrap().data_mut().fill(f64::NAN);
    let tape = Tape::new();
    let bind = Binder::new(&params, &tape);
    let v = tape.constant(random_video([1, 2, 1, 12, 12], 1));
    let err = model.generator.rollout(&bind, &v, 1, 1, None, None, &[false]).unwrap_err();
    assert!(matches!(err, Error::NonFiniteHead("synthesis")), "{err}");
}

#[test]
fn encoder_commutes_with_batch_permutation() {
    let (model, params, _) = tiny_model(tiny_config(Variant::Vae), 2);
    let enc = model.encoder.as_ref().unwrap();
    let video = random_video([3, 2, 1, 12, 12], 3);
    let perm = [2usize, 0, 1];
    let permuted = Tensor::concat(&perm.iter().map(|&i| video.narrow(0, i, 1).unwrap()).collect::<Vec<_>>().iter().collect::<Vec<_>>(), 0).unwrap();
    let stats = |v: &Tensor<f64>| {
        let tape = Tape::new();
        let bind = Binder::new(&params, &tape);
        let (mu, ls) = enc
            .posterior(&bind, &tape.constant(frame(v, 3, 0)), &tape.constant(frame(v, 3, 1)))
            .unwrap();
        (mu.value().clone(), ls.value().clone())
    };
    let (mu, _) = stats(&video);
    let (mu_p, _) = stats(&permuted);
    for (row, &src) in perm.iter().enumerate() {
        assert_eq!(&mu_p.data()[row * 2..row * 2 + 2], &mu.data()[src * 2..src * 2 + 2]);
    }
}

#[test]
fn encoder_input_gradient_matches_finite_differences() {
    let (model, params, _) = tiny_model(tiny_config(Variant::Vae), 4);
    let enc = model.encoder.as_ref().unwrap();
    let inputs = vec![
        frame(&random_video([2, 1, 1, 12, 12], 5), 2, 0),
        frame(&random_video([2, 1, 1, 12, 12], 6), 2, 0),
    ];
    let report = check_gradients(&inputs, 1e-5, 1e-3, |v| {
        let bind = Binder::new(&params, v[0].tape());
        let (mu, _) = enc.posterior(&bind, &v[0], &v[1]).map_err(|e| match e {
            Error::Tensor(t) => t,
            other => panic!("{other}"),
        })?;
        Ok(mu.sum())
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn reparametrised_sample_behaves_linearly_in_mu() {
    let tape = Tape::<f64>::new();
    let mu = tape.leaf(Tensor::from_f64([1, 2, 2], &[0.5, -1.0, 2.0, 0.0]).unwrap());
    let ls = tape.leaf(Tensor::from_f64([1, 2, 2], &[0.1, -0.3, 0.0, 1.0]).unwrap());
    let track = posterior_sample(&mu, &ls, Tensor::zeros([1, 2, 2])).unwrap();
    assert_eq!(track.z.value(), mu.value());
    let eps = standard_normal(&mut ChaCha8Rng::seed_from_u64(0), &[1, 2, 2]);
    let track = posterior_sample(&mu, &ls, eps).unwrap();
    let g = tape.backward(&track.z.sum()).unwrap();
    assert!(g.wrt(&mu).data().iter().all(|&v| v == 1.0));
}

#[test]
fn prior_draws_are_standard_normal() {
    let tape = Tape::<f64>::new();
    let track = prior_latents(&tape, &mut ChaCha8Rng::seed_from_u64(3), 1000, 10, 10);
    let d = track.z.value();
    let mean = d.mean();
    let var = d.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.numel() as f64;
    assert!(mean.abs() < 0.02, "{mean}");
    assert!((var - 1.0).abs() < 0.02, "{var}");
}

#[test]
fn discriminator_scores_one_logit_per_video() {
    let (model, params, mut spectral) = tiny_model(tiny_config(Variant::Gan), 5);
    let disc = model.discriminator.as_ref().unwrap();
    let one = random_video([1, 3, 1, 12, 12], 6);
    let other = random_video([1, 3, 1, 12, 12], 7);
    let batch = Tensor::concat(&[&one, &other, &one], 0).unwrap();
    let tape = Tape::new();
    let bind = Binder::new(&params, &tape);
    let w = disc.normalized_weights(&bind, &mut spectral, 1).unwrap();
    let logits = disc.score(&bind, &w, &tape.constant(batch)).unwrap();
    assert_eq!(logits.shape(), &[3]);
    let l = logits.value().data();
    assert_eq!(l[0], l[2]);
    assert_ne!(l[0], l[1]);
    let short = tape.constant(random_video([1, 2, 1, 12, 12], 8));
    assert!(matches!(disc.score(&bind, &w, &short), Err(Error::Mismatch(_))));
}

#[test]
fn discriminator_input_gradient_matches_finite_differences() {
    let (model, params, spectral) = tiny_model(tiny_config(Variant::Gan), 6);
    let disc = model.discriminator.as_ref().unwrap();
    let report = check_gradients(&[random_video([1, 3, 1, 12, 12], 9)], 1e-5, 1e-3, |v| {
        let bind = Binder::new(&params, v[0].tape());
        let mut sp = spectral.clone();
        let w = disc.normalized_weights(&bind, &mut sp, 1).unwrap();
        Ok(probe(&disc.score(&bind, &w, &v[0]).unwrap())?)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}
