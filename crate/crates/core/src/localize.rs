//! Tamper localization and compositing.
//!
//! A small U-Net reads the attacked image next to the extracted (still
//! shuffled) secret and predicts a soft tamper mask. The final image takes
//! the enhanced recovery where the mask is set and the attacked image
//! elsewhere.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    leaky_relu, masks_to_tensor, plane_to_tensor, tensor_to_masks, Conv2d, ParamStore, UpConv2x, WeightInit,
    LEAKY_SLOPE,
};
use crate::plane::{blend, ImagePlane, TamperMask, CHANNELS};

pub use crate::plane::binarize;

pub const BCE_EPS: f64 = 1e-6;
pub const DEFAULT_THRESHOLD: f32 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizeConfig {
    pub levels: usize,
    pub base: usize,
    pub threshold: f32,
    /// Composite with the soft mask at inference instead of the binarized one.
    pub soft_composite: bool,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self { levels: 3, base: 16, threshold: DEFAULT_THRESHOLD, soft_composite: false }
    }
}

#[derive(Debug, Clone)]
struct DoubleConv(Conv2d, Conv2d);

impl DoubleConv {
    fn new(ps: &ParamStore, cin: usize, cout: usize) -> Result<Self> {
        let k = WeightInit::Kaiming(LEAKY_SLOPE);
        Ok(Self(Conv2d::new(&ps.pp("conv0"), cin, cout, 3, k)?, Conv2d::new(&ps.pp("conv1"), cout, cout, 3, k)?))
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        leaky_relu(&self.1.forward(&leaky_relu(&self.0.forward(x)?)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Localizer {
    down: Vec<DoubleConv>,
    bottom: DoubleConv,
    up: Vec<(UpConv2x, DoubleConv)>,
    head: Conv2d,
    dtype: DType,
}

impl Localizer {
    pub fn new(ps: &ParamStore, cfg: &LocalizeConfig) -> Result<Self> {
        if cfg.levels == 0 || cfg.base == 0 {
            return Err(Error::config("localizer levels and base width must be positive"));
        }
        let width = |l: usize| cfg.base << l;
        let mut down = Vec::new();
        let mut cin = 2 * CHANNELS;
        for l in 0..cfg.levels {
            down.push(DoubleConv::new(&ps.pp(format!("down{l}")), cin, width(l))?);
            cin = width(l);
        }
        let bottom = DoubleConv::new(&ps.pp("bottom"), cin, width(cfg.levels))?;
        let mut up = Vec::new();
        for l in (0..cfg.levels).rev() {
            let p = ps.pp(format!("up{l}"));
            let upconv = UpConv2x::new(&p.pp("upconv"), width(l + 1), width(l), WeightInit::Kaiming(LEAKY_SLOPE))?;
            up.push((upconv, DoubleConv::new(&p.pp("fuse"), 2 * width(l), width(l))?));
        }
        let head = Conv2d::new(&ps.pp("head"), width(0), 1, 1, WeightInit::Kaiming(1.0))?;
        Ok(Self { down, bottom, up, head, dtype: ps.dtype() })
    }

    /// Spatial sizes must be divisible by this.
    pub fn granularity(&self) -> usize {
        1 << self.down.len()
    }

    /// `[b, 3, h, w]` attacked and shuffled secret estimate to a `[b, 1, h, w]`
    /// soft mask.
    pub fn forward_tensor(&self, attacked: &Tensor, secret_est: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = attacked.dims4()?;
        let g = self.granularity();
        if attacked.dims() != secret_est.dims() || c != CHANNELS || h % g != 0 || w % g != 0 {
            return Err(Error::shape(format!(
                "localizer inputs must be [b, 3, {g}k, {g}m] and equal, got {:?} and {:?}",
                attacked.dims(),
                secret_est.dims()
            )));
        }
        let mut x = Tensor::cat(&[attacked, secret_est], 1)?;
        let mut skips = Vec::with_capacity(self.down.len());
        for d in &self.down {
            let f = d.forward(&x)?;
            x = f.avg_pool2d(2)?;
            skips.push(f);
        }
        x = self.bottom.forward(&x)?;
        for ((upconv, fuse), skip) in self.up.iter().zip(skips.iter().rev()) {
            x = fuse.forward(&Tensor::cat(&[&upconv.forward(&x)?, skip], 1)?)?;
        }
        Ok(candle_nn::ops::sigmoid(&self.head.forward(&x)?)?)
    }

    pub fn predict_mask(&self, attacked: &ImagePlane, secret_est: &ImagePlane) -> Result<TamperMask> {
        attacked.ensure_same_dims(secret_est, "predict_mask")?;
        let t =
            self.forward_tensor(&plane_to_tensor(attacked, self.dtype)?, &plane_to_tensor(secret_est, self.dtype)?)?;
        Ok(tensor_to_masks(&t)?.remove(0))
    }
}

/// `m * enh + (1 - m) * attacked` with `[b, 1, h, w]` masks.
pub fn composite_tensor(enh: &Tensor, attacked: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let inv = mask.affine(-1.0, 1.0)?;
    Ok((enh.broadcast_mul(mask)? + attacked.broadcast_mul(&inv)?)?)
}

pub fn composite(enh: &ImagePlane, attacked: &ImagePlane, mask: &TamperMask) -> Result<ImagePlane> {
    blend(enh, attacked, mask)
}

/// Mean pixelwise binary cross-entropy with the prediction clamped to
/// `[eps, 1 - eps]`.
pub fn bce_tensor(soft: &Tensor, truth: &Tensor) -> Result<Tensor> {
    if soft.dims() != truth.dims() {
        return Err(Error::shape(format!("mask shapes differ: {:?} vs {:?}", soft.dims(), truth.dims())));
    }
    let p = soft.clamp(BCE_EPS, 1.0 - BCE_EPS)?;
    let pos = (truth * p.log()?)?;
    let neg = (truth.affine(-1.0, 1.0)? * p.affine(-1.0, 1.0)?.log()?)?;
    Ok((pos + neg)?.mean_all()?.neg()?)
}

pub fn bce_loss(soft: &TamperMask, truth: &TamperMask) -> Result<f64> {
    if soft.dims() != truth.dims() {
        return Err(Error::shape(format!("mask shapes differ: {:?} vs {:?}", soft.dims(), truth.dims())));
    }
    let s = masks_to_tensor(&[soft], DType::F64)?;
    let t = masks_to_tensor(&[truth], DType::F64)?;
    Ok(bce_tensor(&s, &t)?.to_scalar()?)
}
