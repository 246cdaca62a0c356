//! Parameter-naming layer helpers shared by the networks.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use strgate_tensor::{Binder, ParamStore, Tensor, Var};

use crate::error::Result;

pub(crate) const NORM_EPS: f64 = 1e-5;

pub(crate) fn normal_tensor(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape.to_vec(), |_| dist.sample(rng))
}

/// Convolution (`transposed == false`) or transposed convolution with square kernels.
#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
    pub transposed: bool,
}

impl Conv {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
            kernel,
            stride,
            pad,
            bias: true,
            transposed: false,
        }
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn transposed(mut self) -> Self {
        self.transposed = true;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn num_params(&self) -> usize {
        self.cin * self.cout * self.kernel * self.kernel + if self.bias { self.cout } else { 0 }
    }

    /// He-normal weights scaled by `gain`, zero bias.
    pub fn init(&self, store: &mut ParamStore, gain: f64, rng: &mut impl Rng) {
        let k2 = self.kernel * self.kernel;
        let (shape, fan_in) = if self.transposed {
            // each output pixel of a stride-s transposed conv sees k²/s² taps per input channel
            (
                [self.cin, self.cout, self.kernel, self.kernel],
                (self.cin * k2 / (self.stride * self.stride)).max(1),
            )
        } else {
            ([self.cout, self.cin, self.kernel, self.kernel], self.cin * k2)
        };
        let std = gain * (2.0 / fan_in as f64).sqrt();
        store.insert(self.weight_name(), normal_tensor(&shape, std, rng));
        if self.bias {
            store.insert(self.bias_name(), Tensor::zeros([self.cout]));
        }
    }

    pub fn forward<'g>(&self, bind: &Binder<'g, '_>, x: &Var<'g>) -> Result<Var<'g>> {
        let w = bind.var(&self.weight_name())?;
        let b = if self.bias {
            Some(bind.var(&self.bias_name())?)
        } else {
            None
        };
        Ok(if self.transposed {
            x.conv_transpose2d(&w, b.as_ref(), self.stride, self.pad)?
        } else {
            x.conv2d(&w, b.as_ref(), self.stride, self.pad)?
        })
    }
}

/// Instance normalization with a learnable per-channel affine transform.
#[derive(Clone, Debug)]
pub(crate) struct Norm {
    pub name: String,
    pub channels: usize,
}

impl Norm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
        }
    }

    pub fn num_params(&self) -> usize {
        2 * self.channels
    }

    pub fn init(&self, store: &mut ParamStore) {
        self.init_with_gain(store, 1.0);
    }

    /// Starts the affine scale at `gain` instead of 1.
    pub fn init_with_gain(&self, store: &mut ParamStore, gain: f64) {
        store.insert(format!("{}.gamma", self.name), Tensor::full([self.channels], gain));
        store.insert(format!("{}.beta", self.name), Tensor::zeros([self.channels]));
    }

    pub fn forward<'g>(&self, bind: &Binder<'g, '_>, x: &Var<'g>) -> Result<Var<'g>> {
        let gamma = bind.var(&format!("{}.gamma", self.name))?;
        let beta = bind.var(&format!("{}.beta", self.name))?;
        Ok(x.instance_norm(&gamma, &beta, NORM_EPS)?)
    }
}
