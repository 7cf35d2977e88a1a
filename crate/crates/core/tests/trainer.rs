use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use savp::config::RunConfig;
use savp::params::ParamStore;
use savp::synthdata::{gen_stochastic_videos, VideoDataset};
use savp::trainer::{lr_schedule, scheduled_sampling_prob, teacher_forcing_flags, Adam, AdamConfig, Checkpoint, Trainer};
use savp::Error;
use savp_tensor::Tensor;

fn config(variant: &str) -> RunConfig {
    let adversarial = matches!(variant, "gan" | "savp");
    let extra = if adversarial { r#", "ndf": 4"# } else { "" };
    let enc = if matches!(variant, "vae" | "savp") { r#", "nef": 4"# } else { "" };
    RunConfig::from_json(&format!(
        r#"{{
            "seed": 3,
            "scene": {{"height": 12, "width": 12, "sprite": 2}},
            "data": {{"videos": 50, "frames": 5}},
            "model": {{"variant": "{variant}", "ngf": 4, "nz": 2, "n_kernels": 2, "kernel_size": 3{extra}{enc}}},
            "train": {{"iterations": 200, "batch": 4, "context": 2, "horizon": 3, "sampling": [20, 120]}}
        }}"#
    ))
    .unwrap()
}

fn data(cfg: &RunConfig) -> VideoDataset {
    gen_stochastic_videos(&cfg.scene, cfg.seed, cfg.data.videos, cfg.data.frames).unwrap()
}

fn scalar_store(v: f64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.insert("theta", Tensor::from_f64([1], &[v]).unwrap());
    s
}

fn grad(g: f64) -> BTreeMap<String, Tensor<f64>> {
    BTreeMap::from([("theta".to_string(), Tensor::from_f64([1], &[g]).unwrap())])
}

const ADAM: AdamConfig = AdamConfig { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };

#[test]
fn adam_first_step_moves_by_lr() {
    for g in [1e-3, 0.5, -7.0] {
        let mut store = scalar_store(0.3);
        let mut opt = Adam::new(ADAM);
        opt.update(&mut store, &grad(g), 0.01).unwrap();
        let delta = store.get("theta").unwrap().item() - 0.3;
        assert!((delta.abs() - 0.01).abs() < 1e-6, "{delta}");
        assert_eq!(delta.signum(), -g.signum());
    }
    let mut store = scalar_store(0.3);
    let mut opt = Adam::new(ADAM);
    for _ in 0..5 {
        opt.update(&mut store, &grad(0.0), 0.01).unwrap();
    }
    assert_eq!(store.get("theta").unwrap().item(), 0.3);
}

#[test]
fn adam_minimises_a_parabola() {
    let mut store = scalar_store(1.0);
    let mut opt = Adam::new(ADAM);
    for _ in 0..200 {
        let theta = store.get("theta").unwrap().item();
        opt.update(&mut store, &grad(2.0 * theta), ADAM.lr).unwrap();
    }
    assert!(store.get("theta").unwrap().item().abs() < 0.05);
}

#[test]
fn adam_rejects_non_finite_gradients_by_name() {
    let mut store = scalar_store(1.0);
    let mut opt = Adam::new(ADAM);
    let err = opt.update(&mut store, &grad(f64::NAN), 0.1).unwrap_err();
    assert!(matches!(&err, Error::NonFiniteGradient(n) if n == "theta"), "{err}");
    assert_eq!(store.get("theta").unwrap().item(), 1.0);
    assert_eq!(opt.step, 0);
}

/// Largest ratio `|m_hat| / sqrt(v_hat)` reachable after `t` steps
/// (Cauchy-Schwarz on the two moment sums).
fn adam_ratio_bound(b1: f64, b2: f64, t: i32) -> f64 {
    let gamma = b1 * b1 / b2;
    (1.0 - b1) / (1.0 - b2).sqrt() * ((1.0 - gamma.powi(t)) / (1.0 - gamma)).sqrt() * (1.0 - b2.powi(t)).sqrt()
        / (1.0 - b1.powi(t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adam_step_is_bounded_by_lr_for_constant_magnitude(
        signs in prop::collection::vec(any::<bool>(), 1..60),
        mag in 1e-4f64..1e3,
        b1 in 0.0f64..0.99,
        b2 in 0.9f64..0.9999,
    ) {
        let lr = 0.01;
        let mut store = scalar_store(0.0);
        let mut opt = Adam::new(AdamConfig { lr, beta1: b1, beta2: b2, eps: 1e-8 });
        for s in signs {
            let before = store.get("theta").unwrap().item();
            opt.update(&mut store, &grad(if s { mag } else { -mag }), lr).unwrap();
            let step = (store.get("theta").unwrap().item() - before).abs();
            prop_assert!(step <= lr * (1.0 + 1e-9), "{step}");
        }
    }

    #[test]
    fn adam_step_respects_moment_bound(
        grads in prop::collection::vec(-1e3f64..1e3, 1..80),
        b1 in 0.0f64..0.99,
        b2 in 0.9f64..0.9999,
    ) {
        let lr = 0.01;
        let mut store = scalar_store(0.0);
        let mut opt = Adam::new(AdamConfig { lr, beta1: b1, beta2: b2, eps: 1e-8 });
        for (t, g) in grads.iter().enumerate() {
            let before = store.get("theta").unwrap().item();
            opt.update(&mut store, &grad(*g), lr).unwrap();
            let step = (store.get("theta").unwrap().item() - before).abs();
            prop_assert!(step <= lr * adam_ratio_bound(b1, b2, t as i32 + 1) * (1.0 + 1e-9));
        }
    }
}

/// With gradients growing as `(b1 / b2)^-k` the bias-corrected step exceeds lr.
#[test]
fn adam_step_can_exceed_lr_for_growing_gradients() {
    let (b1, b2) = (ADAM.beta1, ADAM.beta2);
    let t = 200;
    let mut store = scalar_store(0.0);
    let mut opt = Adam::new(ADAM);
    let mut step = 0.0;
    for i in 1..=t {
        let before = store.get("theta").unwrap().item();
        opt.update(&mut store, &grad((b1 / b2).powi(t - i)), 1.0).unwrap();
        step = (store.get("theta").unwrap().item() - before).abs();
    }
    let bound = adam_ratio_bound(b1, b2, t);
    assert!(step > 2.0, "{step}");
    assert!((step - bound).abs() < 1e-6 * bound, "{step} vs {bound}");
}

#[test]
fn learning_rate_schedule() {
    let (base, n) = (2e-4, 300);
    assert_eq!(lr_schedule(0, base, n), base);
    assert_eq!(lr_schedule(199, base, n), base);
    assert!((lr_schedule(250, base, n) - base / 2.0).abs() < 1e-18);
    let slope = base / 100.0;
    assert!(lr_schedule(n - 1, base, n) <= slope * (1.0 + 1e-12));
    assert_eq!(lr_schedule(n, base, n), 0.0);
}

#[test]
fn scheduled_sampling_schedule_and_rate() {
    let w = [500, 3000];
    assert_eq!(scheduled_sampling_prob(0, w), 1.0);
    assert_eq!(scheduled_sampling_prob(500, w), 1.0);
    assert_eq!(scheduled_sampling_prob(1750, w), 0.5);
    assert_eq!(scheduled_sampling_prob(3000, w), 0.0);
    assert_eq!(scheduled_sampling_prob(10_000, w), 0.0);
    assert_eq!(scheduled_sampling_prob(5, [5, 5]), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for p in [0.0, 0.1, 0.5, 0.73, 1.0] {
        let flags = teacher_forcing_flags(&mut rng, p, 10_000);
        let rate = flags.iter().filter(|&&f| f).count() as f64 / 1e4;
        assert!((rate - p).abs() <= 0.02, "{p}: {rate}");
    }
}

fn run(trainer: &mut Trainer, data: &VideoDataset, steps: usize) -> Vec<Vec<(String, f64)>> {
    (0..steps).map(|_| trainer.step(data).unwrap()).collect()
}

#[test]
fn training_is_deterministic() {
    for variant in ["deterministic", "savp"] {
        let cfg = config(variant);
        let ds = data(&cfg);
        let a = run(&mut Trainer::new(cfg.clone()).unwrap(), &ds, 10);
        let b = run(&mut Trainer::new(cfg).unwrap(), &ds, 10);
        assert_eq!(a, b);
    }
}

#[test]
fn checkpoint_round_trip_and_resume() {
    let cfg = config("savp");
    let ds = data(&cfg);
    let mut trainer = Trainer::new(cfg.clone()).unwrap();
    run(&mut trainer, &ds, 5);
    let ckpt = trainer.checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.svpc");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path, Some(&cfg.digest())).unwrap();
    assert_eq!(loaded.encode(), ckpt.encode());
    assert_eq!(loaded.params, ckpt.params);
    assert_eq!(loaded.spectral, ckpt.spectral);
    assert_eq!(loaded.optimizers, ckpt.optimizers);
    assert_eq!(loaded.rng, ckpt.rng);
    assert_eq!(loaded.iteration, 5);

    let straight = run(&mut trainer, &ds, 10);
    let mut resumed = Trainer::from_checkpoint(loaded).unwrap();
    assert_eq!(run(&mut resumed, &ds, 10), straight);
    assert_eq!(resumed.checkpoint().encode(), trainer.checkpoint().encode());
}

#[test]
fn checkpoint_with_other_config_is_refused() {
    let cfg = config("vae");
    let trainer = Trainer::new(cfg.clone()).unwrap();
    let bytes = trainer.checkpoint().encode();
    let mut other = cfg.clone();
    other.seed += 1;
    assert!(matches!(Checkpoint::decode(&bytes, Some(&other.digest())), Err(Error::Mismatch(_))));
    assert!(Checkpoint::decode(&bytes, Some(&cfg.digest())).is_ok());
    assert!(Checkpoint::decode(&bytes[..bytes.len() - 1], None).is_err());
    let mut bad = bytes.clone();
    bad[4] = 7;
    assert!(matches!(Checkpoint::decode(&bad, None), Err(Error::Format(_))));
}

#[test]
fn non_finite_loss_names_term_and_iteration() {
    let cfg = config("deterministic");
    let ds = data(&cfg);
    let mut trainer = Trainer::new(cfg).unwrap();
    run(&mut trainer, &ds, 2);
    let (mut video, _) = trainer.sample_batch(&ds).unwrap();
    // The last frame is only ever a target, never a model input.
    let n = video.numel();
    video.data_mut()[n - 1] = f32::NAN;
    let err = trainer.step_on(&video, None).unwrap_err();
    match err {
        Error::NonFinite { what, iteration } => {
            assert_eq!(iteration, 2);
            assert!(what.contains("recon"), "{what}");
        }
        other => panic!("{other}"),
    }
    assert_eq!(trainer.iteration, 2);
}

fn window_means(losses: &[f64], window: usize) -> Vec<f64> {
    losses.chunks(window).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

#[test]
fn vae_smoke_run_decreases_loss() {
    let cfg = config("vae");
    let ds = data(&cfg);
    let mut trainer = Trainer::new(cfg).unwrap();
    let losses: Vec<f64> = run(&mut trainer, &ds, 200)
        .iter()
        .map(|v| v.iter().find(|(k, _)| k == "g_total").unwrap().1)
        .collect();
    let means = window_means(&losses, 50);
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
}

#[test]
fn gan_smoke_run_stays_finite() {
    let cfg = config("gan");
    let ds = data(&cfg);
    let mut trainer = Trainer::new(cfg).unwrap();
    for values in run(&mut trainer, &ds, 200) {
        for key in ["d", "g_adv", "d_total", "g_total"] {
            let v = values.iter().find(|(k, _)| k == key).unwrap().1;
            assert!(v.is_finite(), "{key} = {v}");
        }
    }
}

#[test]
fn batch_sampling_checks_the_dataset() {
    let cfg = config("deterministic");
    let ds = data(&cfg);
    let mut trainer = Trainer::new(cfg).unwrap();
    let (video, actions) = trainer.sample_batch(&ds).unwrap();
    assert_eq!(video.shape(), &[4, 5, 1, 12, 12]);
    assert!(actions.is_none());
    let tiny = ds.subset(&[0, 1], "train").unwrap();
    assert!(matches!(trainer.sample_batch(&tiny), Err(Error::Mismatch(_))));
}
