//! Convolutions as cross-correlation (no kernel flip), lowered to im2col + gemm.
//!
//! 2D convolution is the 3D case with a unit time axis, so both share one
//! kernel. "Same" padding pads with zeros; an odd remainder goes to the
//! bottom/right (and the end of the time axis).

use std::rc::Rc;

use crate::element::{gemm, Element};
use crate::error::{invalid, Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    cin: usize,
    cout: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
    pad: [usize; 3],
    stride: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    fn positions(&self) -> usize {
        self.output.iter().product()
    }

    fn in_volume(&self) -> usize {
        self.input.iter().product()
    }
}

fn out_extent(
    op: &'static str,
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if kernel > input {
                return Err(TensorError::InvalidArgument {
                    op,
                    detail: format!("kernel extent {kernel} exceeds input extent {input}"),
                });
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
    }
}

fn geometry(
    op: &'static str,
    input: &[usize],
    weight: &[usize],
    stride: usize,
    padding: Padding,
) -> Result<Geometry> {
    if stride == 0 {
        return Err(invalid(op, "stride must be at least 1"));
    }
    // Shapes are normalised to [b, c, t, h, w] / [cout, cin, kt, kh, kw].
    let (inp, ker): ([usize; 5], [usize; 5]) = match (input, weight) {
        (&[b, c, h, w], &[co, ci, kh, kw]) => ([b, c, 1, h, w], [co, ci, 1, kh, kw]),
        (&[b, c, t, h, w], &[co, ci, kt, kh, kw]) => ([b, c, t, h, w], [co, ci, kt, kh, kw]),
        _ => {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: input.to_vec(),
                rhs: weight.to_vec(),
            })
        }
    };
    if inp[1] != ker[1] {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: input.to_vec(),
            rhs: weight.to_vec(),
        });
    }
    let mut output = [0; 3];
    let mut pad = [0; 3];
    for i in 0..3 {
        // A unit time axis is never strided.
        let s = if inp[2 + i] == 1 && ker[2 + i] == 1 { 1 } else { stride };
        let (o, p) = out_extent(op, inp[2 + i], ker[2 + i], s, padding)?;
        output[i] = o;
        pad[i] = p;
    }
    Ok(Geometry {
        batch: inp[0],
        cin: inp[1],
        cout: ker[0],
        input: [inp[2], inp[3], inp[4]],
        kernel: [ker[2], ker[3], ker[4]],
        output,
        pad,
        stride,
    })
}

/// Unfolds one batch element `[cin, t, h, w]` into `[rows, positions]`.
fn im2col<F: Element>(g: &Geometry, x: &[F], col: &mut [F]) {
    let [it, ih, iw] = g.input;
    let [kt, kh, kw] = g.kernel;
    let [ot, oh, ow] = g.output;
    let p = g.positions();
    let st = if it == 1 && kt == 1 { 1 } else { g.stride };
    let s = g.stride;
    let mut row = 0;
    for c in 0..g.cin {
        let xc = &x[c * it * ih * iw..(c + 1) * it * ih * iw];
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let dst = &mut col[row * p..(row + 1) * p];
                    let mut q = 0;
                    for t in 0..ot {
                        let ti = (t * st + dt) as isize - g.pad[0] as isize;
                        for y in 0..oh {
                            let yi = (y * s + dh) as isize - g.pad[1] as isize;
                            let row_ok = ti >= 0 && (ti as usize) < it && yi >= 0 && (yi as usize) < ih;
                            if !row_ok {
                                dst[q..q + ow].fill(F::zero());
                                q += ow;
                                continue;
                            }
                            let base = (ti as usize * ih + yi as usize) * iw;
                            for x_ in 0..ow {
                                let xi = (x_ * s + dw) as isize - g.pad[2] as isize;
                                dst[q] = if xi >= 0 && (xi as usize) < iw {
                                    xc[base + xi as usize]
                                } else {
                                    F::zero()
                                };
                                q += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `[rows, positions]` back into `[cin, t, h, w]`.
fn col2im<F: Element>(g: &Geometry, col: &[F], dx: &mut [F]) {
    let [it, ih, iw] = g.input;
    let [kt, kh, kw] = g.kernel;
    let [ot, oh, ow] = g.output;
    let p = g.positions();
    let st = if it == 1 && kt == 1 { 1 } else { g.stride };
    let s = g.stride;
    let mut row = 0;
    for c in 0..g.cin {
        let xc = &mut dx[c * it * ih * iw..(c + 1) * it * ih * iw];
        for dt in 0..kt {
            for dh in 0..kh {
                for dw in 0..kw {
                    let src = &col[row * p..(row + 1) * p];
                    let mut q = 0;
                    for t in 0..ot {
                        let ti = (t * st + dt) as isize - g.pad[0] as isize;
                        for y in 0..oh {
                            let yi = (y * s + dh) as isize - g.pad[1] as isize;
                            if !(ti >= 0 && (ti as usize) < it && yi >= 0 && (yi as usize) < ih) {
                                q += ow;
                                continue;
                            }
                            let base = (ti as usize * ih + yi as usize) * iw;
                            for x_ in 0..ow {
                                let xi = (x_ * s + dw) as isize - g.pad[2] as isize;
                                if xi >= 0 && (xi as usize) < iw {
                                    let v = &mut xc[base + xi as usize];
                                    *v = *v + src[q];
                                }
                                q += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn output_shape(g: &Geometry, rank: usize) -> Vec<usize> {
    if rank == 4 {
        vec![g.batch, g.cout, g.output[1], g.output[2]]
    } else {
        vec![g.batch, g.cout, g.output[0], g.output[1], g.output[2]]
    }
}

fn check_bias<F: Element>(op: &'static str, bias: Option<&Tensor<F>>, cout: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [cout] => Err(TensorError::ShapeMismatch {
            op,
            lhs: vec![cout],
            rhs: b.shape().to_vec(),
        }),
        _ => Ok(()),
    }
}

/// Forward pass; also returns the unfolded columns for reuse in backward.
fn conv_forward<F: Element>(
    op: &'static str,
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<F>, Geometry, Vec<F>)> {
    let g = geometry(op, input.shape(), weight.shape(), stride, padding)?;
    check_bias(op, bias, g.cout)?;
    let (rows, p) = (g.rows(), g.positions());
    let in_stride = g.cin * g.in_volume();
    let mut cols = vec![F::zero(); g.batch * rows * p];
    let mut out = vec![F::zero(); g.batch * g.cout * p];
    for b in 0..g.batch {
        let col = &mut cols[b * rows * p..(b + 1) * rows * p];
        im2col(&g, &input.data()[b * in_stride..(b + 1) * in_stride], col);
        let dst = &mut out[b * g.cout * p..(b + 1) * g.cout * p];
        gemm(g.cout, rows, p, weight.data(), false, col, false, F::zero(), dst);
        if let Some(bias) = bias {
            for (co, chunk) in dst.chunks_mut(p).enumerate() {
                let bv = bias.data()[co];
                chunk.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    let out = Tensor::new(output_shape(&g, input.rank()), out)?;
    Ok((out, g, cols))
}

/// 2D cross-correlation: `[b, cin, h, w]` with `[cout, cin, kh, kw]`.
pub fn conv2d<F: Element>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<F>> {
    if input.rank() != 4 {
        return Err(invalid("conv2d", format!("expected rank-4 input, got {:?}", input.shape())));
    }
    conv_forward("conv2d", input, weight, bias, stride, padding).map(|r| r.0)
}

/// 3D cross-correlation: `[b, cin, t, h, w]` with `[cout, cin, kt, kh, kw]`.
pub fn conv3d<F: Element>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<F>> {
    if input.rank() != 5 {
        return Err(invalid("conv3d", format!("expected rank-5 input, got {:?}", input.shape())));
    }
    conv_forward("conv3d", input, weight, bias, stride, padding).map(|r| r.0)
}

impl<'t, F: Element> Var<'t, F> {
    pub fn conv2d(
        &self,
        weight: &Var<'t, F>,
        bias: Option<&Var<'t, F>>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var<'t, F>> {
        if self.value().rank() != 4 {
            return Err(invalid("conv2d", format!("expected rank-4 input, got {:?}", self.shape())));
        }
        self.conv_nd("conv2d", weight, bias, stride, padding)
    }

    pub fn conv3d(
        &self,
        weight: &Var<'t, F>,
        bias: Option<&Var<'t, F>>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var<'t, F>> {
        if self.value().rank() != 5 {
            return Err(invalid("conv3d", format!("expected rank-5 input, got {:?}", self.shape())));
        }
        self.conv_nd("conv3d", weight, bias, stride, padding)
    }

    fn conv_nd(
        &self,
        op: &'static str,
        weight: &Var<'t, F>,
        bias: Option<&Var<'t, F>>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var<'t, F>> {
        self.same_tape(weight, op)?;
        if let Some(b) = bias {
            self.same_tape(b, op)?;
        }
        let (out, g, cols) = conv_forward(op, self.value(), weight.value(), bias.map(|b| b.value()), stride, padding)?;
        let w = weight.value_rc();
        let in_shape = self.shape().to_vec();
        let w_shape = weight.shape().to_vec();
        let cols = Rc::new(cols);
        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        Ok(self.tape().record(out, &parents, move |grad, needs| {
            let (rows, p) = (g.rows(), g.positions());
            let go = grad.data();
            let gx = needs[0].then(|| {
                let in_stride = g.cin * g.in_volume();
                let mut dx = vec![F::zero(); g.batch * in_stride];
                let mut dcol = vec![F::zero(); rows * p];
                for b in 0..g.batch {
                    let gb = &go[b * g.cout * p..(b + 1) * g.cout * p];
                    gemm(rows, g.cout, p, w.data(), true, gb, false, F::zero(), &mut dcol);
                    col2im(&g, &dcol, &mut dx[b * in_stride..(b + 1) * in_stride]);
                }
                Tensor::new(in_shape.clone(), dx).expect("input shape")
            });
            let gw = needs[1].then(|| {
                let mut dw = vec![F::zero(); g.cout * rows];
                for b in 0..g.batch {
                    let gb = &go[b * g.cout * p..(b + 1) * g.cout * p];
                    let col = &cols[b * rows * p..(b + 1) * rows * p];
                    gemm(g.cout, p, rows, gb, false, col, true, F::one(), &mut dw);
                }
                Tensor::new(w_shape.clone(), dw).expect("weight shape")
            });
            let mut result = vec![gx, gw];
            if needs.len() == 3 {
                result.push(needs[2].then(|| {
                    let mut db = vec![F::zero(); g.cout];
                    for b in 0..g.batch {
                        for (co, d) in db.iter_mut().enumerate() {
                            let s = (b * g.cout + co) * p;
                            *d = *d + go[s..s + p].iter().copied().sum::<F>();
                        }
                    }
                    Tensor::new([g.cout], db).expect("bias shape")
                }));
            }
            result
        }))
    }

    /// Warps each image with its own set of kernels:
    /// `[b, c, h, w]` and `[b, k, kh, kw]` give `[b, k, c, h, w]`, "same" padding.
    pub fn warp_kernels(&self, kernels: &Var<'t, F>) -> Result<Var<'t, F>> {
        self.same_tape(kernels, "warp_kernels")?;
        let out = warp_kernels(self.value(), kernels.value())?;
        let (img, ker) = (self.value_rc(), kernels.value_rc());
        Ok(self.tape().record(out, &[self, kernels], move |grad, needs| {
            let (gi, gk) = warp_kernels_backward(&img, &ker, grad, needs[0], needs[1]);
            vec![gi, gk]
        }))
    }
}

fn warp_dims(image: &[usize], kernels: &[usize]) -> Result<[usize; 7]> {
    match (image, kernels) {
        (&[b, c, h, w], &[b2, k, kh, kw]) if b == b2 => Ok([b, c, h, w, k, kh, kw]),
        _ => Err(TensorError::ShapeMismatch {
            op: "warp_kernels",
            lhs: image.to_vec(),
            rhs: kernels.to_vec(),
        }),
    }
}

/// Forward of [`Var::warp_kernels`] on plain tensors.
pub fn warp_kernels<F: Element>(image: &Tensor<F>, kernels: &Tensor<F>) -> Result<Tensor<F>> {
    let [b, c, h, w, k, kh, kw] = warp_dims(image.shape(), kernels.shape())?;
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let x = image.data();
    let kd = kernels.data();
    let mut out = vec![F::zero(); b * k * c * h * w];
    for bi in 0..b {
        for ki in 0..k {
            let kern = &kd[(bi * k + ki) * kh * kw..(bi * k + ki + 1) * kh * kw];
            for ci in 0..c {
                let src = &x[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                let dst = &mut out[((bi * k + ki) * c + ci) * h * w..((bi * k + ki) * c + ci + 1) * h * w];
                for i in 0..kh {
                    for j in 0..kw {
                        let wv = kern[i * kw + j];
                        for y in 0..h {
                            let yi = y as isize + i as isize - ph as isize;
                            if yi < 0 || yi as usize >= h {
                                continue;
                            }
                            let srow = &src[yi as usize * w..(yi as usize + 1) * w];
                            let drow = &mut dst[y * w..(y + 1) * w];
                            let x0 = pw.saturating_sub(j);
                            let x1 = (w + pw).saturating_sub(j).min(w);
                            for xo in x0..x1 {
                                drow[xo] = drow[xo] + wv * srow[xo + j - pw];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new([b, k, c, h, w], out)
}

fn warp_kernels_backward<F: Element>(
    image: &Tensor<F>,
    kernels: &Tensor<F>,
    grad: &Tensor<F>,
    need_image: bool,
    need_kernels: bool,
) -> (Option<Tensor<F>>, Option<Tensor<F>>) {
    let [b, c, h, w, k, kh, kw] = warp_dims(image.shape(), kernels.shape()).expect("validated forward");
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let x = image.data();
    let kd = kernels.data();
    let g = grad.data();
    let mut gi = need_image.then(|| vec![F::zero(); x.len()]);
    let mut gk = need_kernels.then(|| vec![F::zero(); kd.len()]);
    for bi in 0..b {
        for ki in 0..k {
            let kbase = (bi * k + ki) * kh * kw;
            for ci in 0..c {
                let ibase = (bi * c + ci) * h * w;
                let gbase = ((bi * k + ki) * c + ci) * h * w;
                for i in 0..kh {
                    for j in 0..kw {
                        let wv = kd[kbase + i * kw + j];
                        let mut acc = F::zero();
                        for y in 0..h {
                            let yi = y as isize + i as isize - ph as isize;
                            if yi < 0 || yi as usize >= h {
                                continue;
                            }
                            let srow = ibase + yi as usize * w;
                            let grow = gbase + y * w;
                            let x0 = pw.saturating_sub(j);
                            let x1 = (w + pw).saturating_sub(j).min(w);
                            for xo in x0..x1 {
                                let gv = g[grow + xo];
                                let si = srow + xo + j - pw;
                                acc = acc + gv * x[si];
                                if let Some(gi) = gi.as_mut() {
                                    gi[si] = gi[si] + gv * wv;
                                }
                            }
                        }
                        if let Some(gk) = gk.as_mut() {
                            gk[kbase + i * kw + j] = gk[kbase + i * kw + j] + acc;
                        }
                    }
                }
            }
        }
    }
    (
        gi.map(|d| Tensor::new(image.shape().to_vec(), d).expect("image shape")),
        gk.map(|d| Tensor::new(kernels.shape().to_vec(), d).expect("kernel shape")),
    )
}
