//! Thin parameter-holding wrappers over the primitive ops.

use crate::autodiff::{Tape, Var};
use crate::dtype::Scalar;
use crate::error::Result;
use crate::init::Initializer;
use crate::ops;
use crate::param::{BoundParams, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Norm {
    pub weight: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl Norm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, dim: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            weight: store.add(format!("{prefix}.weight"), Tensor::ones([dim]))?,
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros([dim]))?,
            eps,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &BoundParams, x: Var) -> Result<Var> {
        ops::layernorm(tape, x, p.var(self.weight), p.var(self.bias), self.eps)
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        prefix: &str,
        cin: usize,
        cout: usize,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.add(format!("{prefix}.weight"), init.weight(&[cin, cout]))?,
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros([cout]))?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &BoundParams, x: Var) -> Result<Var> {
        ops::linear(tape, x, p.var(self.weight), p.var(self.bias))
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        prefix: &str,
        kernel: usize,
        cin: usize,
        cout: usize,
        stride: usize,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.add(format!("{prefix}.weight"), init.weight(&[kernel, kernel, cin, cout]))?,
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros([cout]))?,
            stride,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &BoundParams, x: Var) -> Result<Var> {
        ops::conv2d(tape, x, p.var(self.weight), p.var(self.bias), self.stride)
    }
}

#[derive(Debug, Clone)]
pub struct DepthwiseConv {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DepthwiseConv {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        prefix: &str,
        kernel: usize,
        channels: usize,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.add(format!("{prefix}.weight"), init.weight(&[kernel, kernel, channels]))?,
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros([channels]))?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &BoundParams, x: Var) -> Result<Var> {
        ops::dwconv2d(tape, x, p.var(self.weight), p.var(self.bias))
    }
}
