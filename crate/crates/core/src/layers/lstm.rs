use savp_tensor::{Element, Tensor, Var};

use super::{uniform_fan_in, Conv, InitRng, InstanceNorm};
use crate::error::{Error, Result};
use crate::params::{Binder, ParamStore};

/// Hidden and cell state of one LSTM.
#[derive(Clone, Debug)]
pub struct LstmState<'t, F: Element> {
    pub h: Var<'t, F>,
    pub c: Var<'t, F>,
}

/// Splits `[.., 4 * hid, ..]` pre-activations into input, forget, output and
/// candidate gates along `axis`, then applies the LSTM update.
fn lstm_update<'t, F: Element>(
    pre: &Var<'t, F>,
    c: &Var<'t, F>,
    hid: usize,
) -> Result<(Var<'t, F>, Var<'t, F>)> {
    let i = pre.narrow(1, 0, hid)?.sigmoid();
    let f = pre.narrow(1, hid, hid)?.sigmoid();
    let o = pre.narrow(1, 2 * hid, hid)?.sigmoid();
    let g = pre.narrow(1, 3 * hid, hid)?.tanh();
    let c_next = f.mul(c)?.add(&i.mul(&g)?)?;
    Ok((o, c_next))
}

/// Convolutional LSTM with instance-normalised gate pre-activations and
/// instance-normalised cell state.
#[derive(Clone, Debug)]
pub struct ConvLstm {
    pub name: String,
    pub cin: usize,
    pub hid: usize,
    conv: Conv,
    gate_norm: InstanceNorm,
    cell_norm: InstanceNorm,
}

impl ConvLstm {
    pub fn new(name: &str, cin: usize, hid: usize, k: usize) -> Self {
        Self {
            name: name.into(),
            cin,
            hid,
            conv: Conv::new(name, cin + hid, 4 * hid, k).no_bias(),
            gate_norm: InstanceNorm::new(format!("{name}.gates"), 4 * hid),
            cell_norm: InstanceNorm::new(format!("{name}.cell"), hid),
        }
    }

    /// Name of the gate shift vector; entries `hid..2 * hid` act as the forget bias.
    pub fn gate_shift_name(&self) -> String {
        format!("{}.shift", self.gate_norm.name)
    }

    pub fn init<F: Element>(&self, store: &mut ParamStore<F>, rng: &mut InitRng) {
        self.conv.init(store, rng);
        self.gate_norm.init(store);
        self.cell_norm.init(store);
        // The conv has no bias (instance norm would remove it), so the +1
        // forget bias sits in the normalisation shift.
        let shift = store.get_mut(&self.gate_shift_name()).expect("just inserted");
        shift.data_mut()[self.hid..2 * self.hid].fill(F::one());
    }

    pub fn zero_state<'t, F: Element>(
        &self,
        bind: &Binder<'_, 't, F>,
        batch: usize,
        h: usize,
        w: usize,
    ) -> LstmState<'t, F> {
        let z = || bind.tape().constant(Tensor::zeros([batch, self.hid, h, w]));
        LstmState { h: z(), c: z() }
    }

    pub fn step<'t, F: Element>(
        &self,
        bind: &Binder<'_, 't, F>,
        x: &Var<'t, F>,
        state: &LstmState<'t, F>,
    ) -> Result<LstmState<'t, F>> {
        let (xs, hs) = (x.shape(), state.h.shape());
        if xs.len() != 4 || xs[0] != hs[0] || xs[2..] != hs[2..] || xs[1] != self.cin {
            return Err(Error::Mismatch(format!(
                "{}: input {:?} does not fit state {:?} with {} input channels",
                self.name, xs, hs, self.cin
            )));
        }
        let pre = self.conv.forward(bind, &Var::concat(&[x, &state.h], 1)?)?;
        let pre = self.gate_norm.forward(bind, &pre)?;
        let (o, c_next) = lstm_update(&pre, &state.c, self.hid)?;
        let c_norm = self.cell_norm.forward(bind, &c_next)?;
        let h = o.mul(&c_norm.tanh())?;
        Ok(LstmState { h, c: c_norm })
    }
}

/// Fully connected LSTM on `[b, cin]`, forget bias initialised to 1.
#[derive(Clone, Debug)]
pub struct FcLstm {
    pub name: String,
    pub cin: usize,
    pub hid: usize,
}

impl FcLstm {
    pub fn new(name: &str, cin: usize, hid: usize) -> Self {
        Self {
            name: name.into(),
            cin,
            hid,
        }
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn init<F: Element>(&self, store: &mut ParamStore<F>, rng: &mut InitRng) {
        let fan_in = self.cin + self.hid;
        store.insert(format!("{}.w", self.name), uniform_fan_in(rng, &[fan_in, 4 * self.hid], fan_in));
        let mut b = Tensor::zeros([4 * self.hid]);
        b.data_mut()[self.hid..2 * self.hid].fill(F::one());
        store.insert(self.bias_name(), b);
    }

    pub fn zero_state<'t, F: Element>(&self, bind: &Binder<'_, 't, F>, batch: usize) -> LstmState<'t, F> {
        let z = || bind.tape().constant(Tensor::zeros([batch, self.hid]));
        LstmState { h: z(), c: z() }
    }

    pub fn step<'t, F: Element>(
        &self,
        bind: &Binder<'_, 't, F>,
        x: &Var<'t, F>,
        state: &LstmState<'t, F>,
    ) -> Result<LstmState<'t, F>> {
        if x.shape().len() != 2 || x.shape()[1] != self.cin || x.shape()[0] != state.h.shape()[0] {
            return Err(Error::Mismatch(format!(
                "{}: input {:?} does not fit state {:?}",
                self.name,
                x.shape(),
                state.h.shape()
            )));
        }
        let w = bind.param(&format!("{}.w", self.name))?;
        let b = bind.param(&self.bias_name())?;
        let pre = Var::concat(&[x, &state.h], 1)?.matmul(&w)?.add(&b)?;
        let (o, c) = lstm_update(&pre, &state.c, self.hid)?;
        let h = o.mul(&c.tanh())?;
        Ok(LstmState { h, c })
    }
}
