use savp_tensor::{Element, Tensor};

use crate::error::{Error, Result};

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 7;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// `(t, c, h, w)` of a video `[t, c, h, w]`.
pub(crate) fn video_dims(x: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *x {
        [t, c, h, w] => Ok((t, c, h, w)),
        _ => Err(Error::Mismatch(format!("expected a video [t, c, h, w], got {x:?}"))),
    }
}

fn same_shape<F: Element>(x: &Tensor<F>, y: &Tensor<F>) -> Result<(usize, usize, usize, usize)> {
    if x.shape() != y.shape() {
        return Err(Error::Mismatch(format!("compared {:?} against {:?}", x.shape(), y.shape())));
    }
    video_dims(x.shape())
}

pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP)
    }
}

/// PSNR per frame of two videos `[t, c, h, w]` with unit range.
pub fn psnr<F: Element>(x: &Tensor<F>, y: &Tensor<F>) -> Result<Vec<f64>> {
    let (t, c, h, w) = same_shape(x, y)?;
    let n = c * h * w;
    Ok((0..t)
        .map(|i| {
            let r = i * n..(i + 1) * n;
            let mse = x.data()[r.clone()]
                .iter()
                .zip(&y.data()[r])
                .map(|(&a, &b)| (a.to_f64() - b.to_f64()).powi(2))
                .sum::<f64>()
                / n as f64;
            psnr_from_mse(mse, 1.0)
        })
        .collect())
}

/// Normalised 1-d Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid separable filtering of an `h x w` image.
fn filter(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|j| taps[j] * img[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM of two grayscale images.
pub fn ssim_image(x: &[f64], y: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Mismatch(format!("{h}x{w} frame is smaller than the {SSIM_WINDOW}-tap window")));
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p * q).collect() };
    let mx = filter(x, h, w, &taps);
    let my = filter(y, h, w, &taps);
    let mxx = filter(&prod(x, x), h, w, &taps);
    let myy = filter(&prod(y, y), h, w, &taps);
    let mxy = filter(&prod(x, y), h, w, &taps);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Channel-averaged frame `i` of a video.
pub(crate) fn gray_frame<F: Element>(v: &Tensor<F>, i: usize) -> Vec<f64> {
    let (_, c, h, w) = video_dims(v.shape()).expect("checked by caller");
    let plane = h * w;
    let base = &v.data()[i * c * plane..(i + 1) * c * plane];
    (0..plane)
        .map(|p| (0..c).map(|ch| base[ch * plane + p].to_f64()).sum::<f64>() / c as f64)
        .collect()
}

/// SSIM per frame of two videos `[t, c, h, w]`, on channel-averaged frames.
pub fn ssim<F: Element>(x: &Tensor<F>, y: &Tensor<F>) -> Result<Vec<f64>> {
    let (t, _, h, w) = same_shape(x, y)?;
    (0..t).map(|i| ssim_image(&gray_frame(x, i), &gray_frame(y, i), h, w)).collect()
}
