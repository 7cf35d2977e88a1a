//! The four pipeline commands behind the `savp` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use savp_tensor::Tensor;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evalkit::{
    averaged_prediction, best_of_n, diversity, write_pgm, FeatureExtractor, Metric, MetricRow, MetricsReport,
};
use crate::inference::predict;
use crate::model::Model;
use crate::records::{read_file, write_file};
use crate::rng::{indexed, Stream};
use crate::synthdata::{gen_stochastic_videos, read_dataset, split, write_dataset, VideoDataset};
use crate::trainer::{Checkpoint, Trainer};

/// Videos rolled out together during sampling.
const SAMPLE_CHUNK: usize = 16;
/// Slack allowed on sampled pixel values before clamping to [0, 1].
const RANGE_SLACK: f32 = 1e-5;

pub const LOSSES: &str = "losses.csv";
pub const FINAL_CHECKPOINT: &str = "final.svpc";
pub const MANIFEST: &str = "manifest.json";

pub fn sample_file(k: usize) -> String {
    format!("sample_{k:03}.svpd")
}

pub fn checkpoint_file(iteration: u64) -> String {
    format!("ckpt_{iteration:06}.svpc")
}

/// Generates the dataset described by the config.
pub fn gen_data(config: &Path, out: &Path) -> Result<String> {
    let cfg = RunConfig::load(config)?;
    let ds = gen_stochastic_videos(&cfg.scene, cfg.seed, cfg.data.videos, cfg.data.frames)?;
    write_dataset(out, &ds)?;
    Ok(format!(
        "wrote {} videos of {} frames to {} (config {})",
        ds.len(),
        ds.frames_per_video(),
        out.display(),
        cfg.digest()
    ))
}

fn check_scene(cfg: &RunConfig, ds: &VideoDataset) -> Result<()> {
    let (a, b) = (&cfg.scene, &ds.spec);
    if a.height != b.height || a.width != b.width || a.actions != b.actions {
        return Err(Error::Mismatch(format!(
            "dataset scene {}x{} (actions {}) does not match the config's {}x{} (actions {})",
            b.height, b.width, b.actions, a.height, a.width, a.actions
        )));
    }
    Ok(())
}

fn data_split(cfg: &RunConfig, ds: &VideoDataset) -> Result<[VideoDataset; 3]> {
    check_scene(cfg, ds)?;
    split(ds, cfg.data.split, cfg.seed)
}

/// Loss rows of an earlier run with iteration below `before`.
fn previous_losses(path: &Path, before: u64) -> Result<String> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(String::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = String::new();
    for line in text.lines().skip(1) {
        let iter: u64 = line
            .split(',')
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad loss row {line:?} in {}", path.display())))?;
        if iter < before {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Trains on the train split, writing checkpoints and `losses.csv` to `out`.
pub fn train(config: &Path, data: &Path, out: &Path, resume: Option<&Path>) -> Result<String> {
    let cfg = RunConfig::load(config)?;
    let ds = read_dataset(data)?;
    let [train_set, _, _] = data_split(&cfg, &ds)?;
    let mut trainer = match resume {
        Some(path) => Trainer::from_checkpoint(Checkpoint::load(path, Some(&cfg.digest()))?)?,
        None => Trainer::new(cfg.clone())?,
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let losses_path = out.join(LOSSES);
    let mut rows = previous_losses(&losses_path, trainer.iteration)?;
    let flush = |rows: &str| write_file(&losses_path, format!("iter,term,value\n{rows}").as_bytes());

    let every = cfg.train.checkpoint_every;
    while trainer.iteration < cfg.train.iterations {
        let iter = trainer.iteration;
        let values = match trainer.step(&train_set) {
            Ok(v) => v,
            Err(e) => {
                flush(&rows)?;
                return Err(e);
            }
        };
        for (term, value) in values {
            let _ = writeln!(rows, "{iter},{term},{value}");
        }
        if every > 0 && trainer.iteration % every == 0 && trainer.iteration < cfg.train.iterations {
            trainer.checkpoint().save(&out.join(checkpoint_file(trainer.iteration)))?;
            flush(&rows)?;
        }
    }
    trainer.checkpoint().save(&out.join(FINAL_CHECKPOINT))?;
    flush(&rows)?;
    Ok(format!(
        "trained {} for {} iterations; checkpoint {}",
        cfg.variant().name(),
        trainer.iteration,
        out.join(FINAL_CHECKPOINT).display()
    ))
}

/// Describes a directory of sampled predictions.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config: RunConfig,
    pub config_digest: String,
    pub context: usize,
    pub horizon: usize,
    pub ids: Vec<i64>,
    pub files: Vec<String>,
}

fn dump_frames(dir: &Path, video: &Tensor<f32>) -> Result<()> {
    let s = video.shape();
    let (t, c, h, w) = (s[0], s[1], s[2], s[3]);
    for i in 0..t {
        let frame = &video.data()[i * c * h * w..(i + 1) * c * h * w];
        let gray: Vec<f64> = (0..h * w)
            .map(|p| (0..c).map(|ch| frame[ch * h * w + p] as f64).sum::<f64>() / c as f64)
            .collect();
        write_pgm(&dir.join(format!("frame_{i:03}.pgm")), &gray, h, w)?;
    }
    Ok(())
}

fn video_dir(root: &Path, id: i64) -> PathBuf {
    root.join(format!("video_{id:04}"))
}

/// Draws `n` prior-code rollouts per test video. Sample `k` uses its own
/// random stream, so it does not depend on `n`.
pub fn sample(ckpt: &Path, data: &Path, n: usize, out: &Path) -> Result<String> {
    if n == 0 {
        return Err(Error::Config("--n-samples must be at least 1".into()));
    }
    let ckpt = Checkpoint::load(ckpt, None)?;
    let cfg = ckpt.config.clone();
    let model = Model::new(cfg.model_config())?;
    let ds = read_dataset(data)?;
    let [_, _, test] = data_split(&cfg, &ds)?;
    let (c, horizon) = (cfg.train.context, cfg.train.horizon);
    let total = c + horizon;
    if test.is_empty() {
        return Err(Error::Mismatch("the test split is empty".into()));
    }
    if test.frames_per_video() < total {
        return Err(Error::Mismatch(format!(
            "test videos have {} frames, context plus horizon is {total}",
            test.frames_per_video()
        )));
    }
    let truth = test.frames.narrow(1, 0, total)?;
    let mut files = Vec::with_capacity(n);
    for k in 0..n {
        let mut rng = indexed(cfg.seed, Stream::Sampling, k as u64);
        let mut parts = Vec::new();
        for start in (0..test.len()).step_by(SAMPLE_CHUNK) {
            let len = SAMPLE_CHUNK.min(test.len() - start);
            let video = truth.narrow(0, start, len)?;
            let actions = test.actions.as_ref().map(|a| a.narrow(0, start, len)).transpose()?;
            let pred = predict(&model, &ckpt.params, &video, c, horizon, actions.as_ref(), &mut rng)?;
            parts.push(Tensor::concat(&[&video.narrow(1, 0, c)?, &pred], 1)?);
        }
        let mut frames = Tensor::concat(&parts.iter().collect::<Vec<_>>(), 0)?;
        if let Some(bad) = frames
            .data()
            .iter()
            .find(|v| !(v.is_finite() && (-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(*v)))
        {
            return Err(Error::NonFinite {
                what: format!("sampled pixel {bad} outside [0, 1]"),
                iteration: ckpt.iteration,
            });
        }
        frames.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        let steps = total - 1;
        let per = test.frames_per_video() - 1;
        let sampled = VideoDataset {
            spec: test.spec.clone(),
            seed: cfg.seed,
            frames,
            actions: test.actions.as_ref().map(|a| a.narrow(1, 0, steps)).transpose()?,
            directions: (0..test.len())
                .flat_map(|i| test.directions[i * per..i * per + steps].iter().copied())
                .collect(),
            ids: test.ids.clone(),
            split: format!("sample_{k}"),
        };
        write_dataset(&out.join(sample_file(k)), &sampled)?;
        if k == 0 {
            for (i, &id) in sampled.ids.iter().enumerate() {
                let dir = video_dir(&out.join("frames"), id);
                dump_frames(&dir, &sampled.frames.index_first(i)?)?;
            }
        }
        files.push(sample_file(k));
    }
    let manifest = Manifest {
        config_digest: cfg.digest(),
        config: cfg,
        context: c,
        horizon,
        ids: test.ids.clone(),
        files,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    write_file(&out.join(MANIFEST), format!("{text}\n").as_bytes())?;
    Ok(format!("wrote {n} samples for {} test videos to {}", test.len(), out.display()))
}

/// Scores the samples in `samples` against the test split and writes the
/// report to `out`. Nothing is written unless every input checks out.
pub fn eval(samples: &Path, data: &Path, out: &Path, best_of: Option<usize>) -> Result<String> {
    let manifest_path = samples.join(MANIFEST);
    let manifest: Manifest = serde_json::from_slice(&read_file(&manifest_path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
    let cfg = manifest.config.clone();
    cfg.validate()?;
    if let Some(missing) = manifest.files.iter().map(|f| samples.join(f)).find(|p| !p.exists()) {
        return Err(Error::Mismatch(format!("sample file {} is missing", missing.display())));
    }
    let n = best_of.unwrap_or(cfg.eval.best_of.min(manifest.files.len()));
    if n == 0 || n > manifest.files.len() {
        return Err(Error::Mismatch(format!(
            "best-of-{n} requested with {} samples available",
            manifest.files.len()
        )));
    }
    let ds = read_dataset(data)?;
    let [_, _, test] = data_split(&cfg, &ds)?;
    let (c, horizon) = (manifest.context, manifest.horizon);
    if test.ids != manifest.ids || test.frames_per_video() < c + horizon {
        return Err(Error::Mismatch("samples do not line up with the test split".into()));
    }
    let mut sample_sets = Vec::with_capacity(n);
    for file in &manifest.files[..n] {
        let path = samples.join(file);
        let s = read_dataset(&path)?;
        if s.ids != test.ids || s.frames.shape()[1] != c + horizon || s.frames.shape()[2..] != test.frames.shape()[2..] {
            return Err(Error::Mismatch(format!("{} does not match the test videos", path.display())));
        }
        sample_sets.push(s.frames);
    }

    let extractor = FeatureExtractor::new(cfg.seed, test.frames.shape()[2]);
    let mut report = MetricsReport {
        best_of: n,
        config_digest: manifest.config_digest.clone(),
        ..MetricsReport::default()
    };
    let mut averaged = Vec::with_capacity(test.len());
    for (i, &id) in test.ids.iter().enumerate() {
        let truth = test.frames.index_first(i)?.narrow(0, c, horizon)?;
        let preds = sample_sets
            .iter()
            .map(|s| Ok(s.index_first(i)?.narrow(0, c, horizon)?))
            .collect::<Result<Vec<_>>>()?;
        for metric in Metric::ALL {
            let (_, curve) = best_of_n(&truth, &preds, metric, &extractor)?;
            report.rows.extend(curve.into_iter().enumerate().map(|(t, value)| MetricRow {
                video: id,
                timestep: c + t,
                metric,
                value,
            }));
        }
        if preds.len() >= 2 {
            report.diversity.push((id, diversity(&preds, &extractor)?));
        }
        averaged.push((id, averaged_prediction(&preds)?));
    }
    report.write(out)?;
    for (id, video) in &averaged {
        dump_frames(&video_dir(&out.join("averaged"), *id), video)?;
    }
    Ok(format!(
        "evaluated {} videos with best-of-{n}; report in {}",
        test.len(),
        out.display()
    ))
}
