//! Synthetic videos of a square sprite moving in randomly drawn directions.
//!
//! The distribution over futures is known exactly, which makes mode averaging
//! and sample coverage measurable.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use savp_tensor::Tensor;

use crate::error::{Error, Result};
use crate::records::{self, find, Reader, Record, Writer};
use crate::rng::{indexed, substream, Stream};

pub const MAGIC: &[u8; 4] = b"SVPD";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    /// One direction per video, applied at every moving step.
    PerVideo,
    /// A fresh direction at every moving step.
    PerStep,
}

impl Motion {
    fn name(self) -> &'static str {
        match self {
            Motion::PerVideo => "per_video",
            Motion::PerStep => "per_step",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Side of the square sprite.
    pub sprite: usize,
    /// Number of directions, evenly spaced in angle.
    pub directions: usize,
    /// Displacement per moving step, in pixels.
    pub step: usize,
    pub motion: Motion,
    /// Number of identical leading frames before the first move.
    pub hold_frames: usize,
    /// Maximum random offset of the start position on each axis.
    pub start_jitter: usize,
    pub actions: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            sprite: 3,
            directions: 4,
            step: 2,
            motion: Motion::PerVideo,
            hold_frames: 2,
            start_jitter: 0,
            actions: false,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sprite == 0 || self.sprite > self.height.min(self.width) {
            return Err(Error::Config(format!(
                "sprite of side {} does not fit a {}x{} frame",
                self.sprite, self.height, self.width
            )));
        }
        if self.directions == 0 {
            return Err(Error::Config("at least one direction is required".into()));
        }
        if self.hold_frames == 0 {
            return Err(Error::Config("hold_frames must be at least 1".into()));
        }
        Ok(())
    }

    /// `(dy, dx)` of direction `k`: angle `2 pi k / K`, rounded to whole pixels.
    pub fn displacement(&self, k: usize) -> (i64, i64) {
        let a = 2.0 * std::f64::consts::PI * k as f64 / self.directions as f64;
        let s = self.step as f64;
        ((s * a.sin()).round() as i64, (s * a.cos()).round() as i64)
    }

    /// Top-left corner of the centred sprite.
    pub fn center(&self) -> (i64, i64) {
        (((self.height - self.sprite) / 2) as i64, ((self.width - self.sprite) / 2) as i64)
    }

    fn clamp(&self, (y, x): (i64, i64)) -> (i64, i64) {
        (
            y.clamp(0, (self.height - self.sprite) as i64),
            x.clamp(0, (self.width - self.sprite) as i64),
        )
    }

    /// Renders frames `[t, h, w]` for a start corner and per-transition
    /// displacements, clamping the sprite to the frame.
    pub fn render(&self, start: (i64, i64), moves: &[(i64, i64)]) -> Vec<f32> {
        let (h, w, s) = (self.height, self.width, self.sprite);
        let mut out = vec![0.0f32; (moves.len() + 1) * h * w];
        let mut pos = self.clamp(start);
        for t in 0..=moves.len() {
            if t > 0 {
                let (dy, dx) = moves[t - 1];
                pos = self.clamp((pos.0 + dy, pos.1 + dx));
            }
            let frame = &mut out[t * h * w..(t + 1) * h * w];
            for y in pos.0 as usize..pos.0 as usize + s {
                frame[y * w + pos.1 as usize..y * w + pos.1 as usize + s].fill(1.0);
            }
        }
        out
    }

    fn attributes(&self, seed: u64, split: &str) -> String {
        let mut kv = BTreeMap::new();
        kv.insert("height", self.height.to_string());
        kv.insert("width", self.width.to_string());
        kv.insert("sprite", self.sprite.to_string());
        kv.insert("directions", self.directions.to_string());
        kv.insert("step", self.step.to_string());
        kv.insert("motion", self.motion.name().to_string());
        kv.insert("hold_frames", self.hold_frames.to_string());
        kv.insert("start_jitter", self.start_jitter.to_string());
        kv.insert("actions", self.actions.to_string());
        kv.insert("seed", seed.to_string());
        kv.insert("split", split.to_string());
        kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    fn from_attributes(text: &str) -> Result<(Self, u64, String)> {
        let mut kv = BTreeMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad attribute line {line:?}")))?;
            kv.insert(k, v);
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::Format(format!("missing attribute {k}")));
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Format(format!("bad value {v:?} for {k}")))
        }
        let motion = match get("motion")? {
            "per_video" => Motion::PerVideo,
            "per_step" => Motion::PerStep,
            other => return Err(Error::Format(format!("unknown motion {other:?}"))),
        };
        let spec = Self {
            height: num("height", get("height")?)?,
            width: num("width", get("width")?)?,
            sprite: num("sprite", get("sprite")?)?,
            directions: num("directions", get("directions")?)?,
            step: num("step", get("step")?)?,
            motion,
            hold_frames: num("hold_frames", get("hold_frames")?)?,
            start_jitter: num("start_jitter", get("start_jitter")?)?,
            actions: num("actions", get("actions")?)?,
        };
        spec.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok((spec, num("seed", get("seed")?)?, get("split")?.to_string()))
    }
}

/// Videos with their generating metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoDataset {
    pub spec: SceneSpec,
    pub seed: u64,
    /// `[n, t, 1, h, w]`, values in {0, 1}.
    pub frames: Tensor<f32>,
    /// Commanded displacement `(dy, dx)` per transition, `[n, t - 1, 2]`.
    pub actions: Option<Tensor<f32>>,
    /// Direction index per transition, `[n, t - 1]` row-major; -1 while holding.
    pub directions: Vec<i64>,
    /// Generation index of each video.
    pub ids: Vec<i64>,
    pub split: String,
}

impl VideoDataset {
    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frames_per_video(&self) -> usize {
        self.frames.shape()[1]
    }

    /// Displacement applied at every transition of video `i`.
    pub fn moves(&self, i: usize) -> Vec<(i64, i64)> {
        let steps = self.frames_per_video() - 1;
        self.directions[i * steps..(i + 1) * steps]
            .iter()
            .map(|&d| if d < 0 { (0, 0) } else { self.spec.displacement(d as usize) })
            .collect()
    }

    /// Videos at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], split: &str) -> Result<VideoDataset> {
        let steps = self.frames_per_video() - 1;
        let pick = |t: &Tensor<f32>| -> Result<Tensor<f32>> {
            let parts: Vec<Tensor<f32>> = indices.iter().map(|&i| t.narrow(0, i, 1)).collect::<std::result::Result<_, _>>()?;
            if parts.is_empty() {
                let mut shape = t.shape().to_vec();
                shape[0] = 0;
                return Ok(Tensor::zeros(shape));
            }
            Ok(Tensor::concat(&parts.iter().collect::<Vec<_>>(), 0)?)
        };
        Ok(VideoDataset {
            spec: self.spec.clone(),
            seed: self.seed,
            frames: pick(&self.frames)?,
            actions: self.actions.as_ref().map(pick).transpose()?,
            directions: indices
                .iter()
                .flat_map(|&i| self.directions[i * steps..(i + 1) * steps].iter().copied())
                .collect(),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            split: split.to_string(),
        })
    }

    /// Position of the video with generation id `id`.
    pub fn position(&self, id: i64) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }
}

/// Generates `n` videos of `t_total` frames; video `i` depends only on
/// `(seed, spec, i)`.
pub fn gen_stochastic_videos(spec: &SceneSpec, seed: u64, n: usize, t_total: usize) -> Result<VideoDataset> {
    spec.validate()?;
    if t_total < 2 {
        return Err(Error::Config(format!("videos need at least 2 frames, got {t_total}")));
    }
    let (h, w) = (spec.height, spec.width);
    let steps = t_total - 1;
    let mut frames = Vec::with_capacity(n * t_total * h * w);
    let mut directions = Vec::with_capacity(n * steps);
    for i in 0..n {
        let mut rng = indexed(seed, Stream::Data, i as u64);
        let j = spec.start_jitter as i64;
        let (cy, cx) = spec.center();
        let start = if j > 0 {
            (cy + rng.gen_range(-j..=j), cx + rng.gen_range(-j..=j))
        } else {
            (cy, cx)
        };
        let video_dir = rng.gen_range(0..spec.directions);
        let mut moves = Vec::with_capacity(steps);
        for t in 0..steps {
            let d = if t + 1 < spec.hold_frames {
                -1
            } else {
                match spec.motion {
                    Motion::PerVideo => video_dir as i64,
                    Motion::PerStep => rng.gen_range(0..spec.directions) as i64,
                }
            };
            directions.push(d);
            moves.push(if d < 0 { (0, 0) } else { spec.displacement(d as usize) });
        }
        frames.extend(spec.render(start, &moves));
    }
    let mut ds = VideoDataset {
        spec: spec.clone(),
        seed,
        frames: Tensor::new([n, t_total, 1, h, w], frames)?,
        actions: None,
        directions,
        ids: (0..n as i64).collect(),
        split: "all".into(),
    };
    if spec.actions {
        ds.actions = Some(gen_actions(spec, &ds)?);
    }
    Ok(ds)
}

/// Commanded displacement `(dy, dx)` for every transition, zero while holding.
pub fn gen_actions(spec: &SceneSpec, ds: &VideoDataset) -> Result<Tensor<f32>> {
    if !spec.actions {
        return Err(Error::Config("scene is not action-conditioned".into()));
    }
    let steps = ds.frames_per_video() - 1;
    let data = (0..ds.len())
        .flat_map(|i| ds.moves(i))
        .flat_map(|(dy, dx)| [dy as f32, dx as f32])
        .collect();
    Ok(Tensor::new([ds.len(), steps, 2], data)?)
}

pub fn encode_dataset(ds: &VideoDataset) -> Result<Vec<u8>> {
    let steps = ds.frames_per_video() - 1;
    let mut w = Writer::new(MAGIC, VERSION);
    w.str(&ds.spec.attributes(ds.seed, &ds.split));
    let mut recs = vec![
        ("frames".to_string(), Record::from(ds.frames.clone())),
        ("directions".to_string(), Record::i64([ds.len(), steps], ds.directions.clone())?),
        ("ids".to_string(), Record::i64([ds.len()], ds.ids.clone())?),
    ];
    if let Some(a) = &ds.actions {
        recs.push(("actions".to_string(), Record::from(a.clone())));
    }
    w.records(&recs);
    Ok(w.buf)
}

pub fn decode_dataset(buf: &[u8]) -> Result<VideoDataset> {
    let mut r = Reader::open(buf, MAGIC, VERSION)?;
    let (spec, seed, split) = SceneSpec::from_attributes(&r.str()?)?;
    let recs = r.records()?;
    r.finish()?;
    let frames = match find(&recs, "frames")? {
        Record::F32(t) => t.clone(),
        _ => return Err(Error::Format("frames must be f32".into())),
    };
    let s = frames.shape();
    if s.len() != 5 || s[1] < 2 || s[2] != 1 || s[3] != spec.height || s[4] != spec.width {
        return Err(Error::Format(format!("frames of shape {s:?} do not match the scene")));
    }
    let (n, steps) = (s[0], s[1] - 1);
    let directions = find(&recs, "directions")?.as_i64()?.to_vec();
    let ids = find(&recs, "ids")?.as_i64()?.to_vec();
    if directions.len() != n * steps || ids.len() != n {
        return Err(Error::Format("metadata does not match the frame count".into()));
    }
    let actions = match recs.iter().find(|(k, _)| k == "actions") {
        Some((_, Record::F32(t))) if t.shape() == [n, steps, 2] => Some(t.clone()),
        Some(_) => return Err(Error::Format("malformed actions record".into())),
        None => None,
    };
    Ok(VideoDataset {
        spec,
        seed,
        frames,
        actions,
        directions,
        ids,
        split,
    })
}

pub fn write_dataset(path: &Path, ds: &VideoDataset) -> Result<()> {
    records::write_file(path, &encode_dataset(ds)?)
}

pub fn read_dataset(path: &Path) -> Result<VideoDataset> {
    decode_dataset(&records::read_file(path)?)
}

/// Disjoint train/val/test subsets drawn by a seeded shuffle. Each subset
/// keeps the original video order.
pub fn split(ds: &VideoDataset, fractions: [f64; 3], seed: u64) -> Result<[VideoDataset; 3]> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let n = ds.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, Stream::Split));
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let mut parts = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_val].to_vec(),
        order[n_train + n_val..].to_vec(),
    ];
    parts.iter_mut().for_each(|p| p.sort_unstable());
    Ok([
        ds.subset(&parts[0], "train")?,
        ds.subset(&parts[1], "val")?,
        ds.subset(&parts[2], "test")?,
    ])
}
