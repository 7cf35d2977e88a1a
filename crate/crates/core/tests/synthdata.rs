use proptest::prelude::*;
use savp::synthdata::{
    decode_dataset, encode_dataset, gen_actions, gen_stochastic_videos, read_dataset, split, write_dataset, Motion,
    SceneSpec, VideoDataset,
};
use savp::Error;

fn small() -> SceneSpec {
    SceneSpec { height: 8, width: 8, sprite: 2, ..SceneSpec::default() }
}

fn frame(ds: &VideoDataset, i: usize, t: usize) -> &[f32] {
    let (h, w) = (ds.spec.height, ds.spec.width);
    let per = h * w;
    let base = (i * ds.frames_per_video() + t) * per;
    &ds.frames.data()[base..base + per]
}

#[test]
fn single_direction_videos_ignore_the_seed() {
    let spec = SceneSpec { directions: 1, ..SceneSpec::default() };
    let a = gen_stochastic_videos(&spec, 1, 5, 6).unwrap();
    let b = gen_stochastic_videos(&spec, 2, 5, 6).unwrap();
    assert_eq!(a.frames, b.frames);
    assert!(a.directions.iter().all(|&d| d <= 0));
    let jittered = SceneSpec { start_jitter: 1, ..spec };
    let a = gen_stochastic_videos(&jittered, 1, 20, 6).unwrap();
    let b = gen_stochastic_videos(&jittered, 2, 20, 6).unwrap();
    assert_ne!(a.frames, b.frames);
}

#[test]
fn direction_histogram_is_uniform() {
    let spec = SceneSpec::default();
    let n = 4000;
    let ds = gen_stochastic_videos(&spec, 0, n, 4).unwrap();
    let steps = 3;
    let mut counts = [0usize; 4];
    for i in 0..n {
        counts[ds.directions[i * steps + steps - 1] as usize] += 1;
    }
    let (p, nf) = (0.25, n as f64);
    let sd = (nf * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - nf * p).abs() <= 3.0 * sd, "{counts:?}");
    }
}

/// Pearson statistics of 40 independent 4000-video histograms sum to a
/// chi-square with 120 degrees of freedom.
#[test]
fn direction_histograms_are_calibrated_across_seeds() {
    let (n, k, seeds) = (4000usize, 4usize, 40u64);
    let spec = SceneSpec::default();
    let mut chi2 = 0.0;
    for seed in 0..seeds {
        let ds = gen_stochastic_videos(&spec, seed, n, 3).unwrap();
        let mut counts = [0usize; 4];
        for i in 0..n {
            counts[ds.directions[i * 2 + 1] as usize] += 1;
        }
        let e = n as f64 / k as f64;
        chi2 += counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum::<f64>();
    }
    let dof = (seeds as usize * (k - 1)) as f64;
    assert!((chi2 - dof).abs() <= 3.0 * (2.0 * dof).sqrt(), "chi2 {chi2} on {dof} dof");
}

#[test]
fn per_step_directions_are_drawn_each_transition() {
    let spec = SceneSpec { motion: Motion::PerStep, hold_frames: 1, ..SceneSpec::default() };
    let ds = gen_stochastic_videos(&spec, 3, 200, 6).unwrap();
    let changes = (0..200)
        .filter(|&i| {
            let d = &ds.directions[i * 5..i * 5 + 5];
            d.windows(2).any(|w| w[0] != w[1])
        })
        .count();
    assert!(changes > 150);
}

#[test]
fn re_rendering_reproduces_stored_frames() {
    let spec = SceneSpec::default();
    let ds = gen_stochastic_videos(&spec, 5, 50, 8).unwrap();
    let per = ds.frames_per_video() * 16 * 16;
    for i in 0..ds.len() {
        let again = spec.render(spec.center(), &ds.moves(i));
        assert_eq!(&ds.frames.data()[i * per..(i + 1) * per], &again[..]);
    }
    assert_eq!(ds, gen_stochastic_videos(&spec, 5, 50, 8).unwrap());
}

#[test]
fn videos_depend_only_on_their_index() {
    let spec = SceneSpec { motion: Motion::PerStep, ..SceneSpec::default() };
    let many = gen_stochastic_videos(&spec, 9, 30, 5).unwrap();
    let few = gen_stochastic_videos(&spec, 9, 10, 5).unwrap();
    let per = 5 * 16 * 16;
    assert_eq!(&many.frames.data()[..10 * per], few.frames.data());
}

#[test]
fn actions_replay_the_video() {
    let spec = SceneSpec { actions: true, motion: Motion::PerStep, ..SceneSpec::default() };
    let ds = gen_stochastic_videos(&spec, 7, 40, 6).unwrap();
    let actions = ds.actions.as_ref().unwrap();
    assert_eq!(actions, &gen_actions(&spec, &ds).unwrap());
    let per = 6 * 16 * 16;
    for i in 0..ds.len() {
        let a = &actions.data()[i * 10..(i + 1) * 10];
        let moves: Vec<(i64, i64)> = a.chunks(2).map(|m| (m[0] as i64, m[1] as i64)).collect();
        assert_eq!(&ds.frames.data()[i * per..(i + 1) * per], &spec.render(spec.center(), &moves)[..]);
        for (t, m) in a.chunks(2).enumerate() {
            let norm = (m[0].powi(2) + m[1].powi(2)).sqrt();
            let want = if t + 1 < spec.hold_frames { 0.0 } else { spec.step as f32 };
            assert_eq!(norm, want);
        }
    }
    let plain = gen_stochastic_videos(&SceneSpec::default(), 7, 2, 4).unwrap();
    assert!(matches!(gen_actions(&SceneSpec::default(), &plain), Err(Error::Config(_))));
}

#[test]
fn file_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for spec in [SceneSpec::default(), SceneSpec { actions: true, motion: Motion::PerStep, ..small() }] {
        let ds = gen_stochastic_videos(&spec, 4, 12, 5).unwrap();
        let [train, _, _] = split(&ds, [0.5, 0.25, 0.25], 1).unwrap();
        let path = dir.path().join("nested/data.svpd");
        write_dataset(&path, &train).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), train);
    }
}

#[test]
fn truncated_or_foreign_files_are_rejected() {
    let ds = gen_stochastic_videos(&SceneSpec { actions: true, ..small() }, 1, 2, 3).unwrap();
    let buf = encode_dataset(&ds).unwrap();
    for len in 0..buf.len() {
        assert!(decode_dataset(&buf[..len]).is_err(), "prefix of {len} bytes decoded");
    }
    let mut extra = buf.clone();
    extra.push(0);
    assert!(decode_dataset(&extra).is_err());
    let mut magic = buf.clone();
    magic[0] = b'X';
    assert!(matches!(decode_dataset(&magic), Err(Error::Format(_))));
    let mut version = buf;
    version[4] = 9;
    assert!(matches!(decode_dataset(&version), Err(Error::Format(_))));
}

/// Minimal reader written from the format description alone.
fn independent_frame_checksum(buf: &[u8]) -> (Vec<usize>, u64) {
    let mut pos = 0;
    let mut take = |n: usize| {
        let s = &buf[pos..pos + n];
        pos += n;
        s
    };
    assert_eq!(take(4), b"SVPD");
    assert_eq!(u32::from_le_bytes(take(4).try_into().unwrap()), 1);
    let header_len = u32::from_le_bytes(take(4).try_into().unwrap()) as usize;
    let header = std::str::from_utf8(take(header_len)).unwrap().to_string();
    assert!(header.contains("height=8"));
    let count = u32::from_le_bytes(take(4).try_into().unwrap());
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(4).try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(name_len)).unwrap().to_string();
        let dtype = take(1)[0];
        let rank = u32::from_le_bytes(take(4).try_into().unwrap()) as usize;
        let shape: Vec<usize> = (0..rank).map(|_| u64::from_le_bytes(take(8).try_into().unwrap()) as usize).collect();
        let width = match dtype {
            0 => 4,
            1 | 2 => 8,
            other => panic!("dtype {other}"),
        };
        let data = take(width * shape.iter().product::<usize>());
        if name == "frames" {
            assert_eq!(dtype, 0);
            let sum = data
                .chunks(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .enumerate()
                .map(|(i, v)| (i as u64 + 1) * v as u64)
                .sum();
            return (shape, sum);
        }
    }
    panic!("no frames record");
}

#[test]
fn independent_reader_agrees_on_frames() {
    let ds = gen_stochastic_videos(&small(), 8, 6, 4).unwrap();
    let (shape, sum) = independent_frame_checksum(&encode_dataset(&ds).unwrap());
    assert_eq!(shape, ds.frames.shape());
    let want: u64 = ds.frames.data().iter().enumerate().map(|(i, &v)| (i as u64 + 1) * v as u64).sum();
    assert_eq!(sum, want);
    assert!(sum > 0);
}

#[test]
fn split_properties() {
    let ds = gen_stochastic_videos(&small(), 2, 37, 3).unwrap();
    let parts = split(&ds, [0.6, 0.2, 0.2], 5).unwrap();
    let mut ids: Vec<i64> = parts.iter().flat_map(|p| p.ids.clone()).collect();
    ids.sort_unstable();
    assert_eq!(ids, ds.ids);
    assert_eq!(parts.iter().map(|p| p.split.as_str()).collect::<Vec<_>>(), ["train", "val", "test"]);
    for p in &parts {
        for (k, &id) in p.ids.iter().enumerate() {
            let src = ds.position(id).unwrap();
            assert_eq!(frame(p, k, 2), frame(&ds, src, 2));
        }
    }
    assert_eq!(parts, split(&ds, [0.6, 0.2, 0.2], 5).unwrap());
    assert_ne!(parts[0].ids, split(&ds, [0.6, 0.2, 0.2], 6).unwrap()[0].ids);
    let [train, val, test] = split(&ds, [0.0, 1.0, 0.0], 5).unwrap();
    assert!(train.is_empty() && test.is_empty());
    assert_eq!(val.ids, ds.ids);
    assert!(matches!(split(&ds, [0.5, 0.2, 0.2], 5), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pixels_are_binary_with_one_sprite(
        seed in 0u64..1000,
        sprite in 1usize..4,
        step in 1usize..4,
        directions in 1usize..9,
        per_step in any::<bool>(),
        jitter in 0usize..3,
    ) {
        let spec = SceneSpec {
            sprite,
            step,
            directions,
            start_jitter: jitter,
            motion: if per_step { Motion::PerStep } else { Motion::PerVideo },
            ..SceneSpec::default()
        };
        let ds = gen_stochastic_videos(&spec, seed, 4, 8).unwrap();
        for px in ds.frames.data().chunks(256) {
            prop_assert!(px.iter().all(|&v| v == 0.0 || v == 1.0));
            prop_assert_eq!(px.iter().filter(|&&v| v == 1.0).count(), sprite * sprite);
        }
    }
}

#[test]
fn marginal_intensity_at_disjoint_positions_is_one_over_k() {
    let spec = SceneSpec::default();
    let n = 4000;
    let t = spec.hold_frames + 1;
    let ds = gen_stochastic_videos(&spec, 0, n, t + 1).unwrap();
    let (cy, cx) = spec.center();
    let s = spec.sprite as i64;
    for k in 0..spec.directions {
        let (dy, dx) = spec.displacement(k);
        let (y, x) = (cy + 2 * dy + s / 2, cx + 2 * dx + s / 2);
        let idx = (y * 16 + x) as usize;
        let mean = (0..n).map(|i| frame(&ds, i, t)[idx] as f64).sum::<f64>() / n as f64;
        let p = 1.0 / spec.directions as f64;
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((mean - p).abs() <= 3.0 * sd, "direction {k}: {mean}");
    }
}

#[test]
fn bad_scenes_are_rejected() {
    let too_big = SceneSpec { sprite: 17, ..SceneSpec::default() };
    assert!(gen_stochastic_videos(&too_big, 0, 1, 3).is_err());
    let no_dirs = SceneSpec { directions: 0, ..SceneSpec::default() };
    assert!(gen_stochastic_videos(&no_dirs, 0, 1, 3).is_err());
    assert!(gen_stochastic_videos(&SceneSpec::default(), 0, 1, 1).is_err());
}
