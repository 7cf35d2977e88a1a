use rand::Rng;
use savp_tensor::{conv2d, Element, Padding, Tensor};

use super::metrics::video_dims;
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

pub const FEATURE_LAYERS: usize = 5;
const WIDTHS: [usize; FEATURE_LAYERS] = [16, 32, 64, 64, 64];
const SLOPE: f64 = 0.2;

/// Frozen random convolutional features: five stride-2 3x3 convolutions with
/// leaky ReLU, each output tapped.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub seed: u64,
    layers: Vec<(Tensor<f64>, Tensor<f64>)>,
}

/// Per frame, per tap layer, the flattened activations.
pub type Features = Vec<Vec<Vec<f64>>>;

impl FeatureExtractor {
    pub fn new(seed: u64, channels: usize) -> Self {
        let mut rng = substream(seed, Stream::Features);
        let mut cin = channels;
        let layers = WIDTHS
            .iter()
            .map(|&cout| {
                let fan_in = cin * 9;
                let bound = (6.0 / fan_in as f64).sqrt();
                let w: Vec<f64> = (0..cout * fan_in).map(|_| rng.gen_range(-bound..bound)).collect();
                let b: Vec<f64> = (0..cout).map(|_| rng.gen_range(-0.1..0.1)).collect();
                cin = cout;
                (
                    Tensor::new([cout, fan_in / 9, 3, 3], w).expect("weight shape"),
                    Tensor::new([cout], b).expect("bias shape"),
                )
            })
            .collect();
        Self { seed, layers }
    }

    /// Features of every frame of a video `[t, c, h, w]`.
    pub fn features<F: Element>(&self, video: &Tensor<F>) -> Result<Features> {
        let (t, c, _, _) = video_dims(video.shape())?;
        if c != self.layers[0].0.shape()[1] {
            return Err(Error::Mismatch(format!("extractor built for {} channels, got {c}", self.layers[0].0.shape()[1])));
        }
        let mut x: Tensor<f64> = video.cast();
        let mut out: Features = vec![Vec::with_capacity(FEATURE_LAYERS); t];
        for (w, b) in &self.layers {
            x = conv2d(&x, w, Some(b), 2, Padding::Same)?.map(|v| if v > 0.0 { v } else { SLOPE * v });
            let per = x.numel() / t;
            for (i, f) in out.iter_mut().enumerate() {
                f.push(x.data()[i * per..(i + 1) * per].to_vec());
            }
        }
        Ok(out)
    }
}

/// Cosine similarity; exactly 1 for bitwise-equal inputs, 0 when either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    if a == b && a.iter().any(|&v| v != 0.0) {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Per-frame similarity from precomputed features: mean cosine over the tap layers.
pub fn similarity_from_features(a: &Features, b: &Features) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Mismatch(format!("{} frames against {}", a.len(), b.len())));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(fa, fb)| fa.iter().zip(fb).map(|(x, y)| cosine(x, y)).sum::<f64>() / fa.len() as f64)
        .collect())
}

/// Per-frame feature similarity of two videos `[t, c, h, w]`.
pub fn feature_similarity<F: Element>(x: &Tensor<F>, y: &Tensor<F>, ex: &FeatureExtractor) -> Result<Vec<f64>> {
    if x.shape() != y.shape() {
        return Err(Error::Mismatch(format!("compared {:?} against {:?}", x.shape(), y.shape())));
    }
    similarity_from_features(&ex.features(x)?, &ex.features(y)?)
}
