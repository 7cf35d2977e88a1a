use crate::element::{gemm, Element};
use crate::error::{Result, TensorError};
use crate::tape::Var;
use crate::tensor::Tensor;

/// `[m, k] x [k, n] -> [m, n]`.
pub fn matmul<F: Element>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, k, n) = check_matmul(a.shape(), b.shape())?;
    let mut out = vec![F::zero(); m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, F::zero(), &mut out);
    Tensor::new([m, n], out)
}

fn check_matmul(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    match (a, b) {
        (&[m, k], &[k2, n]) if k == k2 => Ok((m, k, n)),
        _ => Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        }),
    }
}

impl<'t, F: Element> Var<'t, F> {
    pub fn matmul(&self, other: &Var<'t, F>) -> Result<Var<'t, F>> {
        self.same_tape(other, "matmul")?;
        let out = matmul(self.value(), other.value())?;
        let (m, k, n) = check_matmul(self.shape(), other.shape())?;
        let (a, b) = (self.value_rc(), other.value_rc());
        Ok(self.tape().record(out, &[self, other], move |g, needs| {
            let ga = needs[0].then(|| {
                // dA = dC * B^T
                let mut d = vec![F::zero(); m * k];
                gemm(m, n, k, g.data(), false, b.data(), true, F::zero(), &mut d);
                Tensor::new([m, k], d).expect("a shape")
            });
            let gb = needs[1].then(|| {
                // dB = A^T * dC
                let mut d = vec![F::zero(); k * n];
                gemm(k, m, n, a.data(), true, g.data(), false, F::zero(), &mut d);
                Tensor::new([k, n], d).expect("b shape")
            });
            vec![ga, gb]
        }))
    }
}
