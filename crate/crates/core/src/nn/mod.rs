//! Tensor plumbing shared by every network: a fast CPU convolution, seeded
//! parameter storage, basic layers and image/tensor conversion.

pub mod conv;
pub mod layers;
pub mod params;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::plane::{ImagePlane, TamperMask, CHANNELS};

pub use conv::conv2d_same;
pub use layers::{leaky_relu, Conv2d, LayerNorm, Linear, UpConv2x, WeightInit, LEAKY_SLOPE};
pub use params::{Init, ParamStore};

/// Stacks images into a `[n, 3, h, w]` tensor.
pub fn planes_to_tensor(planes: &[&ImagePlane], dtype: DType) -> Result<Tensor> {
    let first = planes.first().ok_or_else(|| Error::shape("empty image batch"))?;
    let (w, h) = first.dims();
    let mut data = Vec::with_capacity(planes.len() * CHANNELS * w * h);
    for p in planes {
        p.ensure_same_dims(first, "batch")?;
        data.extend_from_slice(p.data());
    }
    Ok(Tensor::from_vec(data, (planes.len(), CHANNELS, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

pub fn plane_to_tensor(plane: &ImagePlane, dtype: DType) -> Result<Tensor> {
    planes_to_tensor(&[plane], dtype)
}

/// Splits a `[n, 3, h, w]` tensor into images.
pub fn tensor_to_planes(t: &Tensor) -> Result<Vec<ImagePlane>> {
    let (n, c, h, w) = t.dims4()?;
    if c != CHANNELS {
        return Err(Error::shape(format!("expected {CHANNELS} channels, got {c}")));
    }
    let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    flat.chunks_exact(c * h * w).take(n).map(|chunk| ImagePlane::from_data(w, h, chunk.to_vec())).collect()
}

pub fn tensor_to_plane(t: &Tensor) -> Result<ImagePlane> {
    let mut v = tensor_to_planes(t)?;
    if v.len() != 1 {
        return Err(Error::shape(format!("expected a single image, got {}", v.len())));
    }
    Ok(v.remove(0))
}

/// Stacks masks into a `[n, 1, h, w]` tensor.
pub fn masks_to_tensor(masks: &[&TamperMask], dtype: DType) -> Result<Tensor> {
    let first = masks.first().ok_or_else(|| Error::shape("empty mask batch"))?;
    let (w, h) = first.dims();
    let mut data = Vec::with_capacity(masks.len() * w * h);
    for m in masks {
        if m.dims() != (w, h) {
            return Err(Error::shape("mask batch dimensions differ"));
        }
        data.extend_from_slice(m.data());
    }
    Ok(Tensor::from_vec(data, (masks.len(), 1, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Splits a `[n, 1, h, w]` tensor into soft masks.
pub fn tensor_to_masks(t: &Tensor) -> Result<Vec<TamperMask>> {
    let (n, c, h, w) = t.dims4()?;
    if c != 1 {
        return Err(Error::shape(format!("expected a single-channel mask, got {c} channels")));
    }
    let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    flat.chunks_exact(h * w).take(n).map(|chunk| TamperMask::from_data(w, h, chunk.to_vec())).collect()
}

/// Whether every element is finite. A cheap sum is tried first.
pub fn all_finite(t: &Tensor) -> Result<bool> {
    let t = t.detach().to_dtype(DType::F64)?;
    if t.sum_all()?.to_scalar::<f64>()?.is_finite() {
        return Ok(true);
    }
    Ok(t.flatten_all()?.to_vec1::<f64>()?.iter().all(|v| v.is_finite()))
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Normal samples from a ChaCha8 stream, for reproducible test inputs and
/// perturbations.
pub fn seeded_normal(seed: u64, shape: &[usize], std: f64, dtype: DType) -> Result<Tensor> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            std * z
        })
        .collect();
    Ok(Tensor::from_vec(v, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

/// Overwrites every parameter in `ps` with seeded normal noise of scale
/// `std`, for tests that need non-trivial weights.
pub fn randomize_params(ps: &ParamStore, seed: u64, std: f64) -> Result<()> {
    for (i, (_, v)) in ps.named_vars().into_iter().enumerate() {
        v.set(&seeded_normal(seed.wrapping_add(i as u64 * 7919), v.dims(), std, v.dtype())?)?;
    }
    Ok(())
}
