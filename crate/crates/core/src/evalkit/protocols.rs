use savp_tensor::{Element, Tensor};

use super::features::{similarity_from_features, FeatureExtractor};
use super::metrics::{psnr, ssim};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Psnr,
    Ssim,
    Feature,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Psnr, Metric::Ssim, Metric::Feature];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
            Metric::Feature => "feature",
        }
    }

    /// Per-frame curve of `pred` against `truth`.
    pub fn curve<F: Element>(self, truth: &Tensor<F>, pred: &Tensor<F>, ex: &FeatureExtractor) -> Result<Vec<f64>> {
        match self {
            Metric::Psnr => psnr(truth, pred),
            Metric::Ssim => ssim(truth, pred),
            Metric::Feature => {
                if truth.shape() != pred.shape() {
                    return Err(Error::Mismatch(format!("compared {:?} against {:?}", truth.shape(), pred.shape())));
                }
                similarity_from_features(&ex.features(truth)?, &ex.features(pred)?)
            }
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Index and curve of the sample whose curve has the highest mean; the
/// earliest sample wins ties.
pub fn best_curve(curves: &[Vec<f64>]) -> Result<(usize, Vec<f64>)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in curves.iter().enumerate() {
        let m = mean(c);
        if best.map_or(true, |(_, b)| m > b) {
            best = Some((i, m));
        }
    }
    let (i, _) = best.ok_or_else(|| Error::Mismatch("best-of-N needs at least one sample".into()))?;
    Ok((i, curves[i].clone()))
}

/// Best whole-video sample under `metric`.
pub fn best_of_n<F: Element>(
    truth: &Tensor<F>,
    samples: &[Tensor<F>],
    metric: Metric,
    ex: &FeatureExtractor,
) -> Result<(usize, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::Mismatch("best-of-N needs at least one sample".into()));
    }
    let curves = samples
        .iter()
        .map(|s| metric.curve(truth, s, ex))
        .collect::<Result<Vec<_>>>()?;
    best_curve(&curves)
}

/// Mean pairwise feature distance `1 - similarity`, over frames and pairs.
pub fn diversity<F: Element>(samples: &[Tensor<F>], ex: &FeatureExtractor) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Mismatch(format!("diversity needs at least 2 samples, got {}", samples.len())));
    }
    if samples.iter().any(|s| s.shape() != samples[0].shape()) {
        return Err(Error::Mismatch("samples differ in shape".into()));
    }
    let feats = samples.iter().map(|s| ex.features(s)).collect::<Result<Vec<_>>>()?;
    let (mut total, mut pairs) = (0.0, 0usize);
    for i in 0..feats.len() {
        for j in i + 1..feats.len() {
            let sim = similarity_from_features(&feats[i], &feats[j])?;
            total += sim.iter().map(|s| 1.0 - s).sum::<f64>() / sim.len() as f64;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Pointwise mean of the samples.
pub fn averaged_prediction<F: Element>(samples: &[Tensor<F>]) -> Result<Tensor<F>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Mismatch("averaging needs at least one sample".into()))?;
    let mut acc = vec![0.0f64; first.numel()];
    for s in samples {
        if s.shape() != first.shape() {
            return Err(Error::Mismatch("samples differ in shape".into()));
        }
        acc.iter_mut().zip(s.data()).for_each(|(a, &v)| *a += v.to_f64());
    }
    let n = samples.len() as f64;
    Ok(Tensor::new(first.shape().to_vec(), acc.into_iter().map(|a| F::of(a / n)).collect())?)
}
