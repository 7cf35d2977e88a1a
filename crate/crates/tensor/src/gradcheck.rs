//! Finite-difference gradient checking in `f64`.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Worst disagreement between analytic and numerical gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// `(input index, flat element index)` of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares reverse-mode gradients of `f` with central differences of step `h`.
///
/// Relative error is `|a - n| / max(|a|, |n|, floor)`, so gradients much
/// smaller than `floor` are judged on absolute error.
pub fn check_gradients<G>(inputs: &[Tensor<f64>], h: f64, floor: f64, f: G) -> Result<GradReport>
where
    G: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let loss = f(&vars)?;
        let grads = tape.backward(&loss)?;
        vars.iter().map(|v| grads.wrt(v)).collect()
    };
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        Ok(f(&vars)?.value().item())
    };
    let mut report = GradReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..grad.numel() {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + h;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - h;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > report.max_rel_error || rel.is_nan() {
                report = GradReport {
                    max_rel_error: rel,
                    worst: (i, j),
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

type CaseFn = Box<dyn for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>>;

/// One differentiable operation with fixed inputs, reduced to a scalar.
pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    f: CaseFn,
}

impl Case {
    pub fn new(
        name: &'static str,
        inputs: Vec<Tensor<f64>>,
        f: impl for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>> + 'static,
    ) -> Self {
        Self {
            name,
            inputs,
            f: Box::new(f),
        }
    }

    pub fn check(&self, h: f64, floor: f64) -> Result<GradReport> {
        check_gradients(&self.inputs, h, floor, |xs| (self.f)(xs))
    }
}

/// Uniform values in `(-1, 1)` from a fixed seed.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

/// Moves values out of `(k - margin, k + margin)` for each kink `k`, so that
/// finite differences never straddle a non-differentiable point.
pub fn avoid_kinks(t: Tensor<f64>, kinks: &[f64], margin: f64) -> Tensor<f64> {
    t.map(|x| {
        kinks.iter().fold(x, |x, &k| {
            if (x - k).abs() < margin {
                if x >= k {
                    k + margin + (x - k)
                } else {
                    k - margin + (x - k)
                }
            } else {
                x
            }
        })
    })
}

/// `sum(v * r)` for a fixed random `r`; every output element then carries a
/// distinct weight in the checked gradient.
pub fn probe<'t>(v: &Var<'t, f64>) -> Result<Var<'t, f64>> {
    let r = v.tape().constant(random_tensor(v.shape(), 0x5eed));
    Ok(v.mul(&r)?.sum())
}

/// Every differentiable tensor operation on small random inputs.
pub fn op_cases() -> Vec<Case> {
    use crate::ops::conv::Padding;
    let r = random_tensor;
    let positive = |shape: &[usize], seed| r(shape, seed).map(|x| 1.0 + 0.5 * x);
    let nonzero = |shape: &[usize], seed| avoid_kinks(r(shape, seed), &[0.0], 0.1);
    vec![
        Case::new("add", vec![r(&[2, 3, 4], 1), r(&[3, 1], 2)], |x| probe(&x[0].add(&x[1])?)),
        Case::new("sub", vec![r(&[3, 1], 3), r(&[2, 3, 4], 4)], |x| probe(&x[0].sub(&x[1])?)),
        Case::new("mul", vec![r(&[2, 1, 4], 5), r(&[3, 4], 6)], |x| probe(&x[0].mul(&x[1])?)),
        Case::new("div", vec![r(&[2, 3], 7), positive(&[3], 8)], |x| probe(&x[0].div(&x[1])?)),
        Case::new("neg", vec![r(&[5], 9)], |x| probe(&x[0].neg())),
        Case::new("abs", vec![nonzero(&[6], 10)], |x| probe(&x[0].abs())),
        Case::new("exp", vec![r(&[6], 11)], |x| probe(&x[0].exp())),
        Case::new("log", vec![positive(&[6], 12)], |x| probe(&x[0].log()?)),
        Case::new("square", vec![r(&[6], 13)], |x| probe(&x[0].square())),
        Case::new("scale", vec![r(&[6], 14)], |x| probe(&x[0].scale(1.7))),
        Case::new("add_scalar", vec![r(&[6], 15)], |x| probe(&x[0].add_scalar(-0.3))),
        Case::new(
            "clamp",
            vec![avoid_kinks(r(&[8], 16), &[-0.5, 0.5], 0.1)],
            |x| probe(&x[0].clamp(-0.5, 0.5)),
        ),
        Case::new("softplus", vec![r(&[6], 17).map(|x| 4.0 * x)], |x| probe(&x[0].softplus())),
        Case::new("relu", vec![nonzero(&[8], 18)], |x| probe(&x[0].relu())),
        Case::new("leaky_relu", vec![nonzero(&[8], 19)], |x| probe(&x[0].leaky_relu(0.2))),
        Case::new("sigmoid", vec![r(&[6], 20).map(|x| 3.0 * x)], |x| probe(&x[0].sigmoid())),
        Case::new("tanh", vec![r(&[6], 21)], |x| probe(&x[0].tanh())),
        Case::new("softmax", vec![r(&[2, 4, 3], 22).map(|x| 2.0 * x)], |x| probe(&x[0].softmax(1)?)),
        Case::new("matmul", vec![r(&[3, 4], 23), r(&[4, 2], 24)], |x| probe(&x[0].matmul(&x[1])?)),
        Case::new(
            "conv2d_same_bias",
            vec![r(&[2, 2, 5, 5], 25), r(&[3, 2, 3, 3], 26), r(&[3], 27)],
            |x| probe(&x[0].conv2d(&x[1], Some(&x[2]), 1, Padding::Same)?),
        ),
        Case::new(
            "conv2d_valid_stride2",
            vec![r(&[1, 2, 6, 5], 28), r(&[2, 2, 2, 3], 29)],
            |x| probe(&x[0].conv2d(&x[1], None, 2, Padding::Valid)?),
        ),
        Case::new(
            "conv2d_same_even_kernel",
            vec![r(&[1, 1, 5, 5], 30), r(&[2, 1, 4, 4], 31), r(&[2], 32)],
            |x| probe(&x[0].conv2d(&x[1], Some(&x[2]), 2, Padding::Same)?),
        ),
        Case::new(
            "conv3d_same_bias",
            vec![r(&[1, 2, 3, 4, 4], 33), r(&[2, 2, 3, 3, 3], 34), r(&[2], 35)],
            |x| probe(&x[0].conv3d(&x[1], Some(&x[2]), 1, Padding::Same)?),
        ),
        Case::new(
            "conv3d_stride2",
            vec![r(&[1, 1, 4, 5, 5], 36), r(&[2, 1, 3, 3, 3], 37)],
            |x| probe(&x[0].conv3d(&x[1], None, 2, Padding::Same)?),
        ),
        Case::new("avg_pool2d", vec![r(&[1, 2, 4, 6], 38)], |x| probe(&x[0].avg_pool2d(2)?)),
        Case::new("upsample_bilinear2d", vec![r(&[1, 2, 3, 2], 39)], |x| {
            probe(&x[0].upsample_bilinear2d(2)?)
        }),
        Case::new("instance_norm", vec![r(&[2, 3, 4, 4], 40)], |x| probe(&x[0].instance_norm(1e-5)?)),
        Case::new(
            "instance_norm_affine",
            vec![r(&[2, 3, 2, 3], 41), r(&[3], 42), r(&[3], 43)],
            |x| probe(&x[0].instance_norm(1e-5)?.channel_affine(&x[1], &x[2])?),
        ),
        Case::new("warp_kernels", vec![r(&[2, 2, 5, 5], 44), r(&[2, 3, 3, 3], 45)], |x| {
            probe(&x[0].warp_kernels(&x[1])?)
        }),
        Case::new("reshape", vec![r(&[2, 6], 46)], |x| probe(&x[0].reshape([3, 4])?)),
        Case::new("narrow", vec![r(&[2, 5, 3], 47)], |x| probe(&x[0].narrow(1, 1, 3)?)),
        Case::new("concat", vec![r(&[2, 2, 3], 48), r(&[2, 1, 3], 49)], |x| {
            probe(&Var::concat(&[&x[0], &x[1]], 1)?)
        }),
        Case::new("expand", vec![r(&[3, 1], 50)], |x| probe(&x[0].expand([2, 3, 4])?)),
        Case::new("sum_axis", vec![r(&[2, 3, 4], 51)], |x| probe(&x[0].sum_axis(1)?)),
        Case::new("permute", vec![r(&[2, 3, 4], 52)], |x| probe(&x[0].permute(&[2, 0, 1])?)),
        Case::new("mean", vec![r(&[2, 3], 53)], |x| Ok(x[0].square().mean())),
    ]
}
