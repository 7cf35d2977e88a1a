use crate::element::Element;
use crate::error::{invalid, Result, TensorError};
use crate::tape::Var;
use crate::tensor::{broadcast_shape, reduce_to_shape, Tensor};

impl<'t, F: Element> Var<'t, F> {
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, F>> {
        let out = self.value().reshape(shape)?;
        let src = self.shape().to_vec();
        Ok(self.tape().record(out, &[self], move |g, _| {
            vec![Some(g.reshape(src.clone()).expect("same numel"))]
        }))
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, F>> {
        let out = self.value().narrow(axis, start, len)?;
        let src = self.shape().to_vec();
        Ok(self.tape().record(out, &[self], move |g, _| {
            let outer: usize = src[..axis].iter().product();
            let inner: usize = src[axis + 1..].iter().product();
            let mut data = vec![F::zero(); src.iter().product()];
            let chunk = len * inner;
            for o in 0..outer {
                let dst = (o * src[axis] + start) * inner;
                data[dst..dst + chunk].copy_from_slice(&g.data()[o * chunk..(o + 1) * chunk]);
            }
            vec![Some(Tensor::new(src.clone(), data).expect("source shape"))]
        }))
    }

    /// Joins along `axis`; other extents must agree.
    pub fn concat(parts: &[&Var<'t, F>], axis: usize) -> Result<Var<'t, F>> {
        let first = parts.first().ok_or_else(|| invalid("concat", "no inputs"))?;
        for p in &parts[1..] {
            first.same_tape(p, "concat")?;
        }
        let values: Vec<&Tensor<F>> = parts.iter().map(|p| p.value()).collect();
        let out = Tensor::concat(&values, axis)?;
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        Ok(first.tape().record(out, parts, move |g, needs| {
            let mut start = 0;
            extents
                .iter()
                .zip(needs)
                .map(|(&len, &need)| {
                    let piece = need.then(|| g.narrow(axis, start, len).expect("in range"));
                    start += len;
                    piece
                })
                .collect()
        }))
    }

    /// Broadcasts to `shape` (trailing-dimension rules).
    pub fn expand(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, F>> {
        let shape = shape.into();
        if broadcast_shape(self.shape(), &shape).as_deref() != Some(&shape[..]) {
            return Err(TensorError::ShapeMismatch {
                op: "expand",
                lhs: self.shape().to_vec(),
                rhs: shape,
            });
        }
        let zeros = Tensor::zeros(shape);
        let out = crate::tensor::broadcast_zip("expand", &zeros, self.value(), |_, x| x)?;
        let src = self.shape().to_vec();
        Ok(self.tape().record(out, &[self], move |g, _| {
            vec![Some(reduce_to_shape(g, &src))]
        }))
    }

    pub fn sum(&self) -> Var<'t, F> {
        let out = Tensor::scalar(self.value().sum());
        let src = self.shape().to_vec();
        self.tape().record(out, &[self], move |g, _| {
            vec![Some(Tensor::full(src.clone(), g.item()))]
        })
    }

    pub fn mean(&self) -> Var<'t, F> {
        let n = F::of(self.value().numel() as f64);
        self.sum().scale(F::one() / n)
    }

    /// Sums out `axis`, dropping it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t, F>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(invalid("sum_axis", format!("axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let extent = shape[axis];
        let x = self.value().data();
        let mut data = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..extent {
                let src = &x[(o * extent + a) * inner..(o * extent + a + 1) * inner];
                let dst = &mut data[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + s;
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let out = Tensor::new(out_shape, data)?;
        Ok(self.tape().record(out, &[self], move |g, _| {
            let mut data = Vec::with_capacity(outer * extent * inner);
            for o in 0..outer {
                let row = &g.data()[o * inner..(o + 1) * inner];
                for _ in 0..extent {
                    data.extend_from_slice(row);
                }
            }
            vec![Some(Tensor::new(shape.clone(), data).expect("source shape"))]
        }))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t, F>> {
        let out = self.value().permute(perm)?;
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Ok(self.tape().record(out, &[self], move |g, _| {
            vec![Some(g.permute(&inverse).expect("valid inverse"))]
        }))
    }
}
