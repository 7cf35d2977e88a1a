use std::rc::Rc;

use crate::element::Element;
use crate::error::{invalid, Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

/// `(outer, axis extent, inner)` for a reduction along `axis`.
fn split(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(invalid(op, format!("axis {axis} out of range for {shape:?}")));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

/// Numerically stable softmax along `axis`.
pub fn softmax<F: Element>(x: &Tensor<F>, axis: usize) -> Result<Tensor<F>> {
    let (outer, n, inner) = split("softmax", x.shape(), axis)?;
    let src = x.data();
    let mut out = vec![F::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * n + a) * inner + i;
            let max = (0..n).map(|a| src[at(a)]).fold(F::neg_infinity(), F::max);
            let mut total = F::zero();
            for a in 0..n {
                let e = (src[at(a)] - max).exp();
                out[at(a)] = e;
                total = total + e;
            }
            for a in 0..n {
                out[at(a)] = out[at(a)] / total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

impl<'t, F: Element> Var<'t, F> {
    pub fn softmax(&self, axis: usize) -> Result<Var<'t, F>> {
        let out = softmax(self.value(), axis)?;
        let (outer, n, inner) = split("softmax", self.shape(), axis)?;
        let y = Rc::new(out.clone());
        Ok(self.tape().record(out, &[self], move |g, _| {
            let (gd, yd) = (g.data(), y.data());
            let mut dx = vec![F::zero(); yd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |a: usize| (o * n + a) * inner + i;
                    let dot: F = (0..n).map(|a| gd[at(a)] * yd[at(a)]).sum();
                    for a in 0..n {
                        dx[at(a)] = yd[at(a)] * (gd[at(a)] - dot);
                    }
                }
            }
            vec![Some(Tensor::new(y.shape().to_vec(), dx).expect("same shape"))]
        }))
    }

    /// Normalises each `(sample, channel)` plane of `[b, c, ...]` to zero mean
    /// and unit (biased) variance. Errors when a plane has a single element.
    pub fn instance_norm(&self, eps: F) -> Result<Var<'t, F>> {
        let shape = self.shape().to_vec();
        if shape.len() < 3 {
            return Err(invalid("instance_norm", format!("expected [b, c, ...], got {shape:?}")));
        }
        let group: usize = shape[2..].iter().product();
        if group < 2 {
            return Err(TensorError::Domain {
                op: "instance_norm",
                detail: format!("normalisation group of size {group} for shape {shape:?}"),
            });
        }
        let x = self.value().data();
        let planes = x.len() / group;
        let n = F::of(group as f64);
        let mut xhat = vec![F::zero(); x.len()];
        let mut inv_std = vec![F::zero(); planes];
        for p in 0..planes {
            let src = &x[p * group..(p + 1) * group];
            let mean = src.iter().copied().sum::<F>() / n;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let inv = F::one() / (var + eps).sqrt();
            inv_std[p] = inv;
            for (d, &v) in xhat[p * group..(p + 1) * group].iter_mut().zip(src) {
                *d = (v - mean) * inv;
            }
        }
        let out = Tensor::new(shape.clone(), xhat)?;
        let y = Rc::new(out.clone());
        Ok(self.tape().record(out, &[self], move |g, _| {
            let (gd, yd) = (g.data(), y.data());
            let mut dx = vec![F::zero(); gd.len()];
            for p in 0..planes {
                let r = p * group..(p + 1) * group;
                let (gp, yp) = (&gd[r.clone()], &yd[r.clone()]);
                let mean_g = gp.iter().copied().sum::<F>() / n;
                let mean_gy = gp.iter().zip(yp).map(|(&a, &b)| a * b).sum::<F>() / n;
                for ((d, &gv), &yv) in dx[r].iter_mut().zip(gp).zip(yp) {
                    *d = inv_std[p] * (gv - mean_g - yv * mean_gy);
                }
            }
            vec![Some(Tensor::new(shape.clone(), dx).expect("same shape"))]
        }))
    }

    /// Per-channel `x * scale + shift` for `[b, c, ...]` with `scale`, `shift` of shape `[c]`.
    pub fn channel_affine(&self, scale: &Var<'t, F>, shift: &Var<'t, F>) -> Result<Var<'t, F>> {
        let shape = self.shape();
        if shape.len() < 2 || scale.shape() != [shape[1]] || shift.shape() != [shape[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "channel_affine",
                lhs: shape.to_vec(),
                rhs: scale.shape().to_vec(),
            });
        }
        let mut bshape = vec![shape[1]];
        bshape.extend(std::iter::repeat(1).take(shape.len() - 2));
        self.mul(&scale.reshape(bshape.clone())?)?
            .add(&shift.reshape(bshape)?)
    }
}
