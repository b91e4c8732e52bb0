//! Invertible watermarking: hides a (shuffled) secret image inside a cover in
//! the Haar domain and extracts it back from a possibly attacked container.
//!
//! `embed` runs the coupling stack on `(dwt(cover), dwt(secret))` and returns
//! the inverse transform of the first branch as the container; the second
//! branch is the auxiliary noise output. `extract` runs the stack backwards
//! from `(dwt(attacked), noise_estimate)`.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inn::{dwt_tensor, iwt_tensor, DenseSubnet, Inn};
use crate::nn::{leaky_relu, plane_to_tensor, tensor_to_plane, Conv2d, ParamStore, WeightInit, LEAKY_SLOPE};
use crate::plane::ImagePlane;
use crate::wavelet::{SubbandTensor, SUBBANDS};

/// Auxiliary second-branch output, `12 x (H/2) x (W/2)`.
pub type NoiseTensor = SubbandTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Extract with an all-zero auxiliary branch.
    Zero,
    /// Predict the auxiliary branch from the attacked image.
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WatermarkConfig {
    pub blocks: usize,
    /// Growth rate (hidden width) of the dense subnets.
    pub growth: usize,
    pub noise: NoiseMode,
    pub noise_width: usize,
    /// Also regress the estimate onto the true auxiliary output.
    pub supervise_noise: bool,
}

impl Default for WatermarkConfig {
    fn default() -> Self {
        Self { blocks: 12, growth: 32, noise: NoiseMode::Learned, noise_width: 32, supervise_noise: false }
    }
}

impl WatermarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.growth == 0 || self.noise_width == 0 {
            return Err(Error::config("watermark blocks, growth and noise_width must be positive"));
        }
        Ok(())
    }
}

/// Four 3x3 convolutions from the attacked image's subbands to the auxiliary
/// branch; the last layer is zero-initialized so training starts from the
/// zero estimate.
#[derive(Debug, Clone)]
pub struct NoiseEstimator {
    layers: Vec<Conv2d>,
}

impl NoiseEstimator {
    pub fn new(ps: &ParamStore, width: usize) -> Result<Self> {
        let dims = [(SUBBANDS, width), (width, width), (width, width), (width, SUBBANDS)];
        let layers = dims
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout))| {
                let init = if i == 3 { WeightInit::Zeros } else { WeightInit::Kaiming(LEAKY_SLOPE) };
                Conv2d::new(&ps.pp(format!("conv{i}")), cin, cout, 3, init)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// `[b, 12, h, w]` subbands to `[b, 12, h, w]` noise.
    pub fn forward(&self, subbands: &Tensor) -> Result<Tensor> {
        let mut h = subbands.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = leaky_relu(&h)?;
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub struct WatermarkNet {
    inn: Inn<DenseSubnet>,
    estimator: Option<NoiseEstimator>,
    dtype: DType,
}

fn check_image_pair(a: &Tensor, b: &Tensor) -> Result<()> {
    let (_, c, h, w) = a.dims4()?;
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("image shapes differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    if c != 3 || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("expected [b, 3, even, even], got {:?}", a.dims())));
    }
    Ok(())
}

impl WatermarkNet {
    pub fn new(ps: &ParamStore, cfg: &WatermarkConfig) -> Result<Self> {
        cfg.validate()?;
        let inn = Inn::dense(&ps.pp("inn"), cfg.blocks, SUBBANDS, cfg.growth)?;
        let estimator = match cfg.noise {
            NoiseMode::Zero => None,
            NoiseMode::Learned => Some(NoiseEstimator::new(&ps.pp("noise"), cfg.noise_width)?),
        };
        Ok(Self { inn, estimator, dtype: ps.dtype() })
    }

    pub fn blocks(&self) -> usize {
        self.inn.len()
    }

    pub fn noise_mode(&self) -> NoiseMode {
        if self.estimator.is_some() {
            NoiseMode::Learned
        } else {
            NoiseMode::Zero
        }
    }

    /// `(cover, secret) -> (container, noise)` on `[b, 3, h, w]` batches.
    pub fn embed_tensor(&self, cover: &Tensor, secret: &Tensor) -> Result<(Tensor, Tensor)> {
        check_image_pair(cover, secret)?;
        let (y1, y2) = self.inn.forward(&dwt_tensor(cover)?, &dwt_tensor(secret)?)?;
        Ok((iwt_tensor(&y1)?, y2))
    }

    /// `(attacked, noise) -> (cover_est, secret_est)`
    pub fn extract_tensor(&self, attacked: &Tensor, noise: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, _, h, w) = attacked.dims4()?;
        if noise.dims() != [b, SUBBANDS, h / 2, w / 2] {
            return Err(Error::shape(format!("noise {:?} does not match image {:?}", noise.dims(), attacked.dims())));
        }
        let (x1, x2) = self.inn.inverse(&dwt_tensor(attacked)?, noise)?;
        Ok((iwt_tensor(&x1)?, iwt_tensor(&x2)?))
    }

    pub fn estimate_noise_tensor(&self, attacked: &Tensor) -> Result<Tensor> {
        let sb = dwt_tensor(attacked)?;
        match &self.estimator {
            Some(e) => e.forward(&sb),
            None => Ok(sb.zeros_like()?),
        }
    }

    pub fn embed(&self, cover: &ImagePlane, secret: &ImagePlane) -> Result<(ImagePlane, NoiseTensor)> {
        cover.ensure_same_dims(secret, "embed")?;
        let (c, n) = self.embed_tensor(&plane_to_tensor(cover, self.dtype)?, &plane_to_tensor(secret, self.dtype)?)?;
        Ok((tensor_to_plane(&c)?, tensor_to_noise(&n)?))
    }

    pub fn extract(&self, attacked: &ImagePlane, noise: &NoiseTensor) -> Result<(ImagePlane, ImagePlane)> {
        let (c, s) =
            self.extract_tensor(&plane_to_tensor(attacked, self.dtype)?, &noise_to_tensor(noise, self.dtype)?)?;
        Ok((tensor_to_plane(&c)?, tensor_to_plane(&s)?))
    }

    pub fn estimate_noise(&self, attacked: &ImagePlane) -> Result<NoiseTensor> {
        tensor_to_noise(&self.estimate_noise_tensor(&plane_to_tensor(attacked, self.dtype)?)?)
    }
}

pub fn noise_to_tensor(n: &NoiseTensor, dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_vec(n.data().to_vec(), (1, SUBBANDS, n.height(), n.width()), &candle_core::Device::Cpu)?
        .to_dtype(dtype)?)
}

pub fn tensor_to_noise(t: &Tensor) -> Result<NoiseTensor> {
    let (b, c, h, w) = t.dims4()?;
    if b != 1 || c != SUBBANDS {
        return Err(Error::shape(format!("expected [1, {SUBBANDS}, h, w], got {:?}", t.dims())));
    }
    NoiseTensor::from_data(w, h, t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?)
}
