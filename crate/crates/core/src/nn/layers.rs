//! Small building blocks over [`ParamStore`].

use candle_core::{Tensor, D};

use super::conv::conv2d_same;
use super::params::{Init, ParamStore};
use crate::error::Result;

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&(x * LEAKY_SLOPE)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightInit {
    /// He-normal matched to the activation slope that follows the layer.
    Kaiming(f64),
    Zeros,
}

/// Stride-1 "same" convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
}

impl Conv2d {
    pub fn new(ps: &ParamStore, cin: usize, cout: usize, kernel: usize, init: WeightInit) -> Result<Self> {
        let winit = match init {
            WeightInit::Kaiming(slope) => Init::Kaiming { fan_in: cin * kernel * kernel, slope },
            WeightInit::Zeros => Init::Zeros,
        };
        let weight = ps.get("weight", &[cout, cin, kernel, kernel], winit)?;
        let bias = ps.get("bias", &[cout], Init::Zeros)?;
        Ok(Self { weight, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.bias.dim(0).unwrap_or(0)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.out_channels();
        Ok(conv2d_same(x, &self.weight)?.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

/// 2x2 stride-2 transposed convolution: a bias-free 1x1 convolution to
/// `4 * cout` channels followed by depth-to-space.
#[derive(Debug, Clone)]
pub struct UpConv2x {
    weight: Tensor,
    bias: Tensor,
}

impl UpConv2x {
    pub fn new(ps: &ParamStore, cin: usize, cout: usize, init: WeightInit) -> Result<Self> {
        let winit = match init {
            WeightInit::Kaiming(slope) => Init::Kaiming { fan_in: cin, slope },
            WeightInit::Zeros => Init::Zeros,
        };
        let weight = ps.get("weight", &[4 * cout, cin, 1, 1], winit)?;
        let bias = ps.get("bias", &[cout], Init::Zeros)?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.bias.dim(0)?;
        let y = candle_nn::ops::pixel_shuffle(&conv2d_same(x, &self.weight)?, 2)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(ps: &ParamStore, din: usize, dout: usize, init: WeightInit) -> Result<Self> {
        let winit = match init {
            // Transformer layers use a plain fan-in scaled normal.
            WeightInit::Kaiming(_) => Init::Normal((1.0 / din as f64).sqrt()),
            WeightInit::Zeros => Init::Zeros,
        };
        let weight = ps.get("weight", &[dout, din], winit)?;
        let bias = ps.get("bias", &[dout], Init::Zeros)?;
        Ok(Self { weight, bias })
    }

    /// `x: [..., din] -> [..., dout]`
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(ps: &ParamStore, dim: usize) -> Result<Self> {
        Ok(Self { gamma: ps.get("gamma", &[dim], Init::Const(1.0))?, beta: ps.get("beta", &[dim], Init::Zeros)? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let xn = xc.broadcast_div(&(var + Self::EPS)?.sqrt()?)?;
        Ok(xn.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}
