use std::rc::Rc;

use crate::element::Element;
use crate::error::{invalid, Result, TensorError};
use crate::tape::Var;
use crate::tensor::{broadcast_zip, reduce_to_shape, Tensor};

/// Elementwise operation kinds. Binary kinds broadcast over trailing dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Abs,
    Exp,
    Log,
    Square,
}

impl Elementwise {
    pub fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul | Self::Div)
    }
}

impl<'t, F: Element> Var<'t, F> {
    /// Dispatches on `kind`; `other` is required for binary kinds and ignored otherwise.
    pub fn elementwise(&self, kind: Elementwise, other: Option<&Var<'t, F>>) -> Result<Var<'t, F>> {
        if kind.is_binary() {
            let other = other.ok_or_else(|| invalid("elementwise", format!("{kind:?} needs two operands")))?;
            return match kind {
                Elementwise::Add => self.add(other),
                Elementwise::Sub => self.sub(other),
                Elementwise::Mul => self.mul(other),
                _ => self.div(other),
            };
        }
        Ok(match kind {
            Elementwise::Neg => self.neg(),
            Elementwise::Abs => self.abs(),
            Elementwise::Exp => self.exp(),
            Elementwise::Log => return self.log(),
            _ => self.square(),
        })
    }

    pub fn add(&self, other: &Var<'t, F>) -> Result<Var<'t, F>> {
        self.same_tape(other, "add")?;
        let out = broadcast_zip("add", self.value(), other.value(), |a, b| a + b)?;
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        Ok(self.tape().record(out, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| reduce_to_shape(g, &sa)),
                needs[1].then(|| reduce_to_shape(g, &sb)),
            ]
        }))
    }

    pub fn sub(&self, other: &Var<'t, F>) -> Result<Var<'t, F>> {
        self.same_tape(other, "sub")?;
        let out = broadcast_zip("sub", self.value(), other.value(), |a, b| a - b)?;
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        Ok(self.tape().record(out, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| reduce_to_shape(g, &sa)),
                needs[1].then(|| reduce_to_shape(g, &sb).map(|x| -x)),
            ]
        }))
    }

    pub fn mul(&self, other: &Var<'t, F>) -> Result<Var<'t, F>> {
        self.same_tape(other, "mul")?;
        let out = broadcast_zip("mul", self.value(), other.value(), |a, b| a * b)?;
        let (a, b) = (self.value_rc(), other.value_rc());
        Ok(self.tape().record(out, &[self, other], move |g, needs| {
            let ga = needs[0].then(|| {
                let full = broadcast_zip("mul", g, &b, |g, b| g * b).expect("validated forward");
                reduce_to_shape(&full, a.shape())
            });
            let gb = needs[1].then(|| {
                let full = broadcast_zip("mul", g, &a, |g, a| g * a).expect("validated forward");
                reduce_to_shape(&full, b.shape())
            });
            vec![ga, gb]
        }))
    }

    /// Errors if any divisor is zero.
    pub fn div(&self, other: &Var<'t, F>) -> Result<Var<'t, F>> {
        self.same_tape(other, "div")?;
        if other.value().data().iter().any(|&x| x == F::zero()) {
            return Err(TensorError::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let out = broadcast_zip("div", self.value(), other.value(), |a, b| a / b)?;
        let (a, b) = (self.value_rc(), other.value_rc());
        let y = Rc::new(out.clone());
        Ok(self.tape().record(out, &[self, other], move |g, needs| {
            let ga = needs[0].then(|| {
                let full = broadcast_zip("div", g, &b, |g, b| g / b).expect("validated forward");
                reduce_to_shape(&full, a.shape())
            });
            let gb = needs[1].then(|| {
                // d(a/b)/db = -y/b
                let gy = g.zip_map(&y, |g, y| -g * y).expect("same shape");
                let full = broadcast_zip("div", &gy, &b, |v, b| v / b).expect("validated forward");
                reduce_to_shape(&full, b.shape())
            });
            vec![ga, gb]
        }))
    }

    /// Applies `f` elementwise; `df(x, y)` is the local derivative given input and output.
    fn unary(&self, f: impl Fn(F) -> F, df: impl Fn(F, F) -> F + 'static) -> Var<'t, F> {
        let out = self.value().map(f);
        let x = self.value_rc();
        let y = Rc::new(out.clone());
        self.tape().record(out, &[self], move |g, _| {
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .zip(y.data())
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(Tensor::new(g.shape().to_vec(), data).expect("same shape"))]
        })
    }

    pub fn neg(&self) -> Var<'t, F> {
        self.scale(-F::one())
    }

    /// Subgradient 0 at 0.
    pub fn abs(&self) -> Var<'t, F> {
        self.unary(F::abs, |x, _| {
            if x > F::zero() {
                F::one()
            } else if x < F::zero() {
                -F::one()
            } else {
                F::zero()
            }
        })
    }

    pub fn exp(&self) -> Var<'t, F> {
        self.unary(F::exp, |_, y| y)
    }

    /// Errors on non-positive input.
    pub fn log(&self) -> Result<Var<'t, F>> {
        if let Some(bad) = self.value().data().iter().find(|&&x| x <= F::zero()) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(F::ln, |x, _| F::one() / x))
    }

    pub fn square(&self) -> Var<'t, F> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn scale(&self, c: F) -> Var<'t, F> {
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: F) -> Var<'t, F> {
        self.unary(move |x| x + c, |_, _| F::one())
    }

    /// Clamps into `[lo, hi]`; gradient is zero where the clamp is active.
    pub fn clamp(&self, lo: F, hi: F) -> Var<'t, F> {
        self.unary(
            move |x| x.max(lo).min(hi),
            move |x, _| if x < lo || x > hi { F::zero() } else { F::one() },
        )
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Var<'t, F> {
        self.unary(
            |x| x.max(F::zero()) + (-x.abs()).exp().ln_1p(),
            |x, _| sigmoid(x),
        )
    }

    pub fn relu(&self) -> Var<'t, F> {
        self.unary(
            |x| x.max(F::zero()),
            |x, _| if x > F::zero() { F::one() } else { F::zero() },
        )
    }

    pub fn leaky_relu(&self, alpha: F) -> Var<'t, F> {
        self.unary(
            move |x| if x > F::zero() { x } else { alpha * x },
            move |x, _| if x > F::zero() { F::one() } else { alpha },
        )
    }

    pub fn sigmoid(&self) -> Var<'t, F> {
        self.unary(sigmoid, |_, y| y * (F::one() - y))
    }

    pub fn tanh(&self) -> Var<'t, F> {
        self.unary(F::tanh, |_, y| F::one() - y * y)
    }
}

pub(crate) fn sigmoid<F: Element>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}
