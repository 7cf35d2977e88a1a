mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use savp::layers::{power_iterate, spectral_normalize, uniform_fan_in, ConvLstm, FcLstm, LstmState, SpectralState};
use savp::model::Variant;
use savp::params::{Binder, ParamStore};
use savp_tensor::gradcheck::{check_gradients, probe, random_tensor};
use savp_tensor::{Tape, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn top_singular_value(t: &Tensor<f64>) -> f64 {
    let rows = t.shape()[0];
    let cols = t.numel() / rows;
    DMatrix::from_row_slice(rows, cols, t.data()).singular_values().max()
}

#[test]
fn convlstm_with_everything_zero_outputs_zero() {
    let cell = ConvLstm::new("cell", 2, 3, 3);
    let mut store = ParamStore::<f64>::new();
    cell.init(&mut store, &mut rng(0));
    store.iter_mut().for_each(|(_, t)| t.data_mut().fill(0.0));
    let tape = Tape::new();
    let bind = Binder::new(&store, &tape);
    let x = tape.constant(Tensor::zeros([2, 2, 4, 4]));
    let next = cell.step(&bind, &x, &cell.zero_state(&bind, 2, 4, 4)).unwrap();
    assert!(next.h.value().data().iter().all(|&v| v == 0.0));
    assert!(next.c.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn fclstm_with_everything_zero_outputs_zero() {
    let cell = FcLstm::new("fc", 3, 4);
    let mut store = ParamStore::<f64>::new();
    cell.init(&mut store, &mut rng(0));
    store.iter_mut().for_each(|(_, t)| t.data_mut().fill(0.0));
    let tape = Tape::new();
    let bind = Binder::new(&store, &tape);
    let x = tape.constant(Tensor::zeros([2, 3]));
    let next = cell.step(&bind, &x, &cell.zero_state(&bind, 2)).unwrap();
    assert_eq!(next.h.shape(), &[2, 4]);
    assert!(next.h.value().data().iter().all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn convlstm_state_shapes_are_preserved(b in 1usize..3, cin in 1usize..4, hid in 1usize..4, hw in 2usize..6, k in prop::sample::select(vec![1usize, 3, 5]), seed in 0u64..1000) {
        let cell = ConvLstm::new("cell", cin, hid, k);
        let mut store = ParamStore::<f64>::new();
        cell.init(&mut store, &mut rng(seed));
        let tape = Tape::new();
        let bind = Binder::new(&store, &tape);
        let x = tape.constant(random_tensor(&[b, cin, hw, hw], seed));
        let s0 = cell.zero_state(&bind, b, hw, hw);
        let s1 = cell.step(&bind, &x, &s0).unwrap();
        let s2 = cell.step(&bind, &x, &s1).unwrap();
        prop_assert_eq!(s2.h.shape(), &[b, hid, hw, hw]);
        prop_assert_eq!(s2.c.shape(), s2.h.shape());
    }

    #[test]
    fn fclstm_state_shapes_are_preserved(b in 1usize..4, cin in 1usize..5, hid in 1usize..5, seed in 0u64..1000) {
        let cell = FcLstm::new("fc", cin, hid);
        let mut store = ParamStore::<f64>::new();
        cell.init(&mut store, &mut rng(seed));
        let tape = Tape::new();
        let bind = Binder::new(&store, &tape);
        let x = tape.constant(random_tensor(&[b, cin], seed));
        let s = cell.step(&bind, &x, &cell.zero_state(&bind, b)).unwrap();
        prop_assert_eq!(s.h.shape(), &[b, hid]);
        prop_assert_eq!(s.c.shape(), &[b, hid]);
    }

    #[test]
    fn spectral_normalization_is_scale_invariant(seed in 0u64..1000, scale in 0.01f64..100.0) {
        let w = random_tensor(&[4, 6], seed);
        let mut state = SpectralState::<f64>::init(&[4, 6], &mut rng(seed));
        power_iterate(&w, &mut state, 200).unwrap();
        let mut s2 = state.clone();
        let tape = Tape::new();
        let a = spectral_normalize(&tape.constant(w.clone()), &mut state, 1).unwrap();
        let b = spectral_normalize(&tape.constant(w.map(|v| v * scale)), &mut s2, 1).unwrap();
        for (x, y) in a.value().data().iter().zip(b.value().data()) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }
}

#[test]
fn convlstm_step_matches_finite_differences() {
    let cell = ConvLstm::new("cell", 2, 2, 3);
    let mut store = ParamStore::<f64>::new();
    cell.init(&mut store, &mut rng(5));
    let inputs = vec![
        random_tensor(&[2, 2, 4, 4], 1),
        random_tensor(&[2, 2, 4, 4], 2),
        random_tensor(&[2, 2, 4, 4], 3),
    ];
    let report = check_gradients(&inputs, 1e-5, 1e-3, |v| {
        let bind = Binder::new(&store, v[0].tape());
        let s = cell
            .step(&bind, &v[0], &LstmState { h: v[1].clone(), c: v[2].clone() })
            .map_err(|e| match e {
                savp::Error::Tensor(t) => t,
                other => panic!("{other}"),
            })?;
        probe(&s.h)?.add(&probe(&s.c)?)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");

    let x = random_tensor(&[2, 2, 4, 4], 1);
    let params = common::check_param_gradients(&store, &["cell."], 12, 1e-5, 1e-3, 1e-4, |bind| {
        let tape = bind.tape();
        let st = LstmState {
            h: tape.constant(random_tensor(&[2, 2, 4, 4], 2)),
            c: tape.constant(random_tensor(&[2, 2, 4, 4], 3)),
        };
        let s = cell.step(bind, &tape.constant(x.clone()), &st).unwrap();
        probe(&s.h).unwrap()
    });
    assert!(params.max_rel_error < 1e-4 && params.kinks == 0, "{params:?}");
}

#[test]
fn fclstm_step_matches_finite_differences() {
    let cell = FcLstm::new("fc", 3, 2);
    let mut store = ParamStore::<f64>::new();
    cell.init(&mut store, &mut rng(2));
    let inputs = vec![random_tensor(&[2, 3], 1), random_tensor(&[2, 2], 2), random_tensor(&[2, 2], 3)];
    let report = check_gradients(&inputs, 1e-5, 1e-3, |v| {
        let bind = Binder::new(&store, v[0].tape());
        let s = cell
            .step(&bind, &v[0], &LstmState { h: v[1].clone(), c: v[2].clone() })
            .map_err(|e| match e {
                savp::Error::Tensor(t) => t,
                other => panic!("{other}"),
            })?;
        probe(&s.h)?.add(&probe(&s.c)?)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    let params = common::check_param_gradients(&store, &["fc."], 64, 1e-5, 1e-3, 1e-4, |bind| {
        let tape = bind.tape();
        let st = cell.zero_state(bind, 2);
        let s = cell.step(bind, &tape.constant(inputs[0].clone()), &st).unwrap();
        let s = cell.step(bind, &tape.constant(inputs[0].clone()), &s).unwrap();
        probe(&s.h).unwrap()
    });
    assert!(params.max_rel_error < 1e-4 && params.kinks == 0, "{params:?}");
}

#[test]
fn cells_are_pure() {
    let cell = ConvLstm::new("cell", 1, 2, 3);
    let mut store = ParamStore::<f32>::new();
    cell.init(&mut store, &mut rng(1));
    let run = || {
        let tape = Tape::new();
        let bind = Binder::new(&store, &tape);
        let x = tape.constant(random_tensor(&[1, 1, 5, 5], 4).cast::<f32>());
        let s = cell.step(&bind, &x, &cell.zero_state(&bind, 1, 5, 5)).unwrap();
        (s.h.value().clone(), s.c.value().clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn diagonal_weight_has_sigma_three() {
    let w = Tensor::<f64>::from_f64([2, 2], &[3.0, 0.0, 0.0, 1.0]).unwrap();
    let mut state = SpectralState { u: vec![0.6, 0.8], v: vec![0.8, 0.6] };
    let sigma = power_iterate(&w, &mut state, 30).unwrap();
    assert!((sigma - 3.0).abs() < 1e-9);
    let tape = Tape::new();
    let n = spectral_normalize(&tape.constant(w), &mut state, 1).unwrap();
    assert!((top_singular_value(n.value()) - 1.0).abs() < 1e-9);
}

#[test]
fn normalized_weight_is_a_fixed_point() {
    let w = random_tensor(&[5, 7], 11);
    let mut state = SpectralState::<f64>::init(&[5, 7], &mut rng(1));
    let tape = Tape::new();
    let once = spectral_normalize(&tape.constant(w), &mut state, 100).unwrap().value().clone();
    let twice = spectral_normalize(&tape.constant(once.clone()), &mut state, 5).unwrap();
    for (a, b) in once.data().iter().zip(twice.value().data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn power_iteration_matches_svd_after_five_rounds() {
    for seed in 0..20 {
        let w = random_tensor(&[8, 24], seed);
        let mut state = SpectralState::<f64>::init(&[8, 24], &mut rng(seed + 100));
        let est = power_iterate(&w, &mut state, 5).unwrap();
        let exact = top_singular_value(&w);
        assert!((est - exact).abs() / exact < 0.02, "seed {seed}: {est} vs {exact}");
        let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm(&state.u) - 1.0).abs() < 1e-12 && (norm(&state.v) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zero_weight_is_rejected() {
    let mut state = SpectralState::<f64>::init(&[3, 3], &mut rng(0));
    assert!(power_iterate(&Tensor::zeros([3, 3]), &mut state, 1).is_err());
    let tape = Tape::new();
    let w = tape.constant(random_tensor(&[3, 3], 0));
    assert!(spectral_normalize(&w, &mut state, 0).is_err());
}

#[test]
fn discriminator_weights_have_unit_spectral_norm() {
    let (model, mut params, mut spectral) = common::tiny_model(common::tiny_config(Variant::Savp), 3);
    for doubled in [false, true] {
        if doubled {
            params.iter_mut().for_each(|(_, t)| t.data_mut().iter_mut().for_each(|v| *v *= 2.0));
        }
        let tape = Tape::new();
        let bind = Binder::new(&params, &tape);
        for disc in [&model.discriminator, &model.discriminator_vae].into_iter().flatten() {
            let w = disc.normalized_weights(&bind, &mut spectral, 5).unwrap();
            for t in w.tensors() {
                let s = top_singular_value(t.value());
                assert!((0.95..=1.05).contains(&s), "{s}");
            }
        }
    }
}

#[test]
fn initialisation_is_seeded_and_sets_forget_bias() {
    let a = common::tiny_model(common::tiny_config(Variant::Savp), 9).1;
    let b = common::tiny_model(common::tiny_config(Variant::Savp), 9).1;
    let c = common::tiny_model(common::tiny_config(Variant::Savp), 10).1;
    assert_eq!(a, b);
    assert_ne!(a, c);

    let cell = ConvLstm::new("cell", 2, 3, 3);
    let fc = FcLstm::new("fc", 2, 3);
    let mut store = ParamStore::<f64>::new();
    cell.init(&mut store, &mut rng(0));
    fc.init(&mut store, &mut rng(0));
    let shift = store.get(&cell.gate_shift_name()).unwrap().data();
    assert!(shift[3..6].iter().all(|&v| v == 1.0));
    assert!(shift[..3].iter().chain(&shift[6..]).all(|&v| v == 0.0));
    let bias = store.get(&fc.bias_name()).unwrap().data();
    assert!(bias[3..6].iter().all(|&v| v == 1.0));
}

#[test]
fn uniform_init_has_expected_spread() {
    let fan_in = 25;
    let t: Tensor<f64> = uniform_fan_in(&mut rng(4), &[100, 100], fan_in);
    let s = (1.0 / fan_in as f64).sqrt();
    assert!(t.data().iter().all(|v| v.abs() <= s));
    let mean = t.mean();
    let std = (t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t.numel() as f64).sqrt();
    let expected = s / 3f64.sqrt();
    assert!((std - expected).abs() < 0.2 * expected, "{std} vs {expected}");
}
