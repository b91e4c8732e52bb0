//! Image enhancement: a residual refiner applied to the coarse recovery.
//! `enh = x + R(x)` with a zero-initialized output layer, so an untrained
//! refiner is the identity.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{leaky_relu, plane_to_tensor, tensor_to_plane, Conv2d, ParamStore, WeightInit, LEAKY_SLOPE};
use crate::plane::{ImagePlane, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhanceArch {
    /// Residual blocks of two 3x3 convolutions with a global skip.
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnhanceConfig {
    pub arch: EnhanceArch,
    pub blocks: usize,
    pub width: usize,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self { arch: EnhanceArch::Residual, blocks: 8, width: 32 }
    }
}

#[derive(Debug, Clone)]
pub struct Enhancer {
    head: Conv2d,
    blocks: Vec<(Conv2d, Conv2d)>,
    tail: Conv2d,
    dtype: DType,
}

impl Enhancer {
    pub fn new(ps: &ParamStore, cfg: &EnhanceConfig) -> Result<Self> {
        if cfg.width == 0 {
            return Err(Error::config("enhancer width must be positive"));
        }
        let w = cfg.width;
        let k = WeightInit::Kaiming(LEAKY_SLOPE);
        let head = Conv2d::new(&ps.pp("head"), CHANNELS, w, 3, k)?;
        let blocks = (0..cfg.blocks)
            .map(|i| {
                let bp = ps.pp(format!("block{i}"));
                Ok((
                    Conv2d::new(&bp.pp("conv0"), w, w, 3, k)?,
                    Conv2d::new(&bp.pp("conv1"), w, w, 3, WeightInit::Zeros)?,
                ))
            })
            .collect::<Result<_>>()?;
        let tail = Conv2d::new(&ps.pp("tail"), w, CHANNELS, 3, WeightInit::Zeros)?;
        Ok(Self { head, blocks, tail, dtype: ps.dtype() })
    }

    pub fn forward_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let f = self.head.forward(x)?;
        let mut r = f.clone();
        for (a, b) in &self.blocks {
            r = (&r + b.forward(&leaky_relu(&a.forward(&r)?)?)?)?;
        }
        let r = (r + f)?;
        Ok((x + self.tail.forward(&r)?)?)
    }

    pub fn enhance(&self, img: &ImagePlane) -> Result<ImagePlane> {
        tensor_to_plane(&self.forward_tensor(&plane_to_tensor(img, self.dtype)?)?)
    }
}
