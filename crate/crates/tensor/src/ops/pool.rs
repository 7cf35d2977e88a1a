use crate::element::Element;
use crate::error::{invalid, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

fn spatial(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        &[b, c, h, w] => Ok((b * c, h, w)),
        _ => Err(invalid(op, format!("expected [b, c, h, w], got {shape:?}"))),
    }
}

/// Non-overlapping average pooling with window and stride `k`.
pub fn avg_pool2d<F: Element>(x: &Tensor<F>, k: usize) -> Result<Tensor<F>> {
    let (planes, h, w) = spatial("avg_pool2d", x.shape())?;
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(invalid("avg_pool2d", format!("window {k} does not tile {h}x{w}")));
    }
    let (oh, ow) = (h / k, w / k);
    let inv = F::one() / F::of((k * k) as f64);
    let mut out = vec![F::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..h {
            for xx in 0..w {
                let d = &mut dst[(y / k) * ow + xx / k];
                *d = *d + src[y * w + xx] * inv;
            }
        }
    }
    let s = x.shape();
    Tensor::new([s[0], s[1], oh, ow], out)
}

/// Source indices and weight of the upper neighbour for each output index,
/// with corners of input and output aligned.
fn interp_table(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|o| {
            if input == 1 || output == 1 {
                return (0, 0, 0.0);
            }
            let pos = o as f64 * (input - 1) as f64 / (output - 1) as f64;
            let i0 = (pos.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Bilinear upsampling by an integer `factor`, corner-aligned.
pub fn upsample_bilinear2d<F: Element>(x: &Tensor<F>, factor: usize) -> Result<Tensor<F>> {
    let (planes, h, w) = spatial("upsample_bilinear2d", x.shape())?;
    if factor == 0 {
        return Err(invalid("upsample_bilinear2d", "factor must be at least 1"));
    }
    let (oh, ow) = (h * factor, w * factor);
    let (ty, tx) = (interp_table(h, oh), interp_table(w, ow));
    let mut out = vec![F::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = F::of(fy);
            for (xx, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = F::of(fx);
                let top = src[y0 * w + x0] * (F::one() - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (F::one() - fx) + src[y1 * w + x1] * fx;
                dst[y * ow + xx] = top * (F::one() - fy) + bot * fy;
            }
        }
    }
    let s = x.shape();
    Tensor::new([s[0], s[1], oh, ow], out)
}

impl<'t, F: Element> Var<'t, F> {
    pub fn avg_pool2d(&self, k: usize) -> Result<Var<'t, F>> {
        let out = avg_pool2d(self.value(), k)?;
        let shape = self.shape().to_vec();
        Ok(self.tape().record(out, &[self], move |g, _| {
            let (h, w) = (shape[2], shape[3]);
            let (oh, ow) = (h / k, w / k);
            let inv = F::one() / F::of((k * k) as f64);
            let planes = shape[0] * shape[1];
            let mut dx = vec![F::zero(); planes * h * w];
            for p in 0..planes {
                let src = &g.data()[p * oh * ow..(p + 1) * oh * ow];
                for y in 0..h {
                    for xx in 0..w {
                        dx[p * h * w + y * w + xx] = src[(y / k) * ow + xx / k] * inv;
                    }
                }
            }
            vec![Some(Tensor::new(shape.clone(), dx).expect("input shape"))]
        }))
    }

    pub fn upsample_bilinear2d(&self, factor: usize) -> Result<Var<'t, F>> {
        let out = upsample_bilinear2d(self.value(), factor)?;
        let shape = self.shape().to_vec();
        Ok(self.tape().record(out, &[self], move |g, _| {
            let (h, w) = (shape[2], shape[3]);
            let (oh, ow) = (h * factor, w * factor);
            let (ty, tx) = (interp_table(h, oh), interp_table(w, ow));
            let planes = shape[0] * shape[1];
            let mut dx = vec![F::zero(); planes * h * w];
            for p in 0..planes {
                let src = &g.data()[p * oh * ow..(p + 1) * oh * ow];
                let dst = &mut dx[p * h * w..(p + 1) * h * w];
                for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
                    let fy = F::of(fy);
                    for (xx, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let fx = F::of(fx);
                        let v = src[y * ow + xx];
                        let (top, bot) = (v * (F::one() - fy), v * fy);
                        dst[y0 * w + x0] = dst[y0 * w + x0] + top * (F::one() - fx);
                        dst[y0 * w + x1] = dst[y0 * w + x1] + top * fx;
                        dst[y1 * w + x0] = dst[y1 * w + x0] + bot * (F::one() - fx);
                        dst[y1 * w + x1] = dst[y1 * w + x1] + bot * fx;
                    }
                }
            }
            vec![Some(Tensor::new(shape.clone(), dx).expect("input shape"))]
        }))
    }
}
