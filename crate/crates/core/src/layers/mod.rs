//! Parameterised building blocks. Each block only records parameter names and
//! sizes; values live in a [`ParamStore`] and are bound per step.

mod init;
mod lstm;
mod spectral;

pub use init::{uniform_fan_in, InitRng};
pub use lstm::{ConvLstm, FcLstm, LstmState};
pub use spectral::{power_iterate, spectral_normalize, SpectralState, SpectralStore};

use savp_tensor::{Element, Padding, Tensor, Var};

use crate::error::Result;
use crate::params::{Binder, ParamStore};

/// Instance-norm epsilon used throughout the model.
pub const NORM_EPS: f64 = 1e-5;

/// 2D or 3D convolution with "same" padding.
#[derive(Clone, Debug)]
pub struct Conv {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub bias: bool,
    pub spatial_dims: usize,
}

impl Conv {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, k: usize) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
            k,
            stride: 1,
            bias: true,
            spatial_dims: 2,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn three_d(mut self) -> Self {
        self.spatial_dims = 3;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        let mut s = vec![self.cout, self.cin];
        s.extend(std::iter::repeat(self.k).take(self.spatial_dims));
        s
    }

    pub fn init<F: Element>(&self, store: &mut ParamStore<F>, rng: &mut InitRng) {
        let shape = self.weight_shape();
        let fan_in = shape[1..].iter().product();
        store.insert(self.weight_name(), uniform_fan_in(rng, &shape, fan_in));
        if self.bias {
            store.insert(format!("{}.b", self.name), Tensor::zeros([self.cout]));
        }
    }

    pub fn forward<'t, F: Element>(&self, bind: &Binder<'_, 't, F>, x: &Var<'t, F>) -> Result<Var<'t, F>> {
        let w = bind.param(&self.weight_name())?;
        self.forward_with(bind, x, &w)
    }

    /// Same as [`Conv::forward`] with an externally prepared weight
    /// (for example a spectrally normalised one).
    pub fn forward_with<'t, F: Element>(
        &self,
        bind: &Binder<'_, 't, F>,
        x: &Var<'t, F>,
        w: &Var<'t, F>,
    ) -> Result<Var<'t, F>> {
        let b = if self.bias {
            Some(bind.param(&format!("{}.b", self.name))?)
        } else {
            None
        };
        let y = if self.spatial_dims == 3 {
            x.conv3d(w, b.as_ref(), self.stride, Padding::Same)?
        } else {
            x.conv2d(w, b.as_ref(), self.stride, Padding::Same)?
        };
        Ok(y)
    }
}

/// Fully connected layer on `[n, cin]` with weight `[cin, cout]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn init<F: Element>(&self, store: &mut ParamStore<F>, rng: &mut InitRng) {
        store.insert(self.weight_name(), uniform_fan_in(rng, &[self.cin, self.cout], self.cin));
        store.insert(format!("{}.b", self.name), Tensor::zeros([self.cout]));
    }

    pub fn forward<'t, F: Element>(&self, bind: &Binder<'_, 't, F>, x: &Var<'t, F>) -> Result<Var<'t, F>> {
        let w = bind.param(&self.weight_name())?;
        self.forward_with(bind, x, &w)
    }

    pub fn forward_with<'t, F: Element>(
        &self,
        bind: &Binder<'_, 't, F>,
        x: &Var<'t, F>,
        w: &Var<'t, F>,
    ) -> Result<Var<'t, F>> {
        let b = bind.param(&format!("{}.b", self.name))?;
        Ok(x.matmul(w)?.add(&b)?)
    }
}

/// Instance normalisation with a learned per-channel scale and shift.
#[derive(Clone, Debug)]
pub struct InstanceNorm {
    pub name: String,
    pub channels: usize,
}

impl InstanceNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
        }
    }

    pub fn init<F: Element>(&self, store: &mut ParamStore<F>) {
        store.insert(format!("{}.scale", self.name), Tensor::ones([self.channels]));
        store.insert(format!("{}.shift", self.name), Tensor::zeros([self.channels]));
    }

    pub fn forward<'t, F: Element>(&self, bind: &Binder<'_, 't, F>, x: &Var<'t, F>) -> Result<Var<'t, F>> {
        let scale = bind.param(&format!("{}.scale", self.name))?;
        let shift = bind.param(&format!("{}.shift", self.name))?;
        Ok(x.instance_norm(F::of(NORM_EPS))?.channel_affine(&scale, &shift)?)
    }
}

/// Mean over every axis after the first two: `[b, c, ...] -> [b, c]`.
pub fn global_mean<'t, F: Element>(x: &Var<'t, F>) -> Result<Var<'t, F>> {
    let s = x.shape();
    let (b, c) = (s[0], s[1]);
    let rest: usize = s[2..].iter().product();
    Ok(x.reshape([b, c, rest])?.sum_axis(2)?.scale(F::one() / F::of(rest as f64)))
}

/// Broadcasts `[b, n]` to `[b, n, h, w]`.
pub fn tile_spatial<'t, F: Element>(v: &Var<'t, F>, h: usize, w: usize) -> Result<Var<'t, F>> {
    let (b, n) = (v.shape()[0], v.shape()[1]);
    Ok(v.reshape([b, n, 1, 1])?.expand([b, n, h, w])?)
}
