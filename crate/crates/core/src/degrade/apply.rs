//! Applying degradations to image tensors.
//!
//! Noise, JPEG (cubic surrogate), Gaussian blur, brightness and contrast are
//! differentiable. Median filtering, Poisson noise and hue rotation are
//! computed on detached values and passed straight through:
//! `x + (f(x) - x).detach()`, whose gradient is the identity.

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use super::jpeg::{jpeg_tensor, Rounding};
use super::preset::{Degradation, DegradationPreset};
use crate::error::{Error, Result};
use crate::nn::{plane_to_tensor, tensor_to_plane};
use crate::plane::ImagePlane;

/// Normalized 1D Gaussian taps of odd length `kernel`.
pub fn gaussian_taps(kernel: usize, sigma: f64) -> Vec<f64> {
    let c = (kernel / 2) as f64;
    let w: Vec<f64> = (0..kernel).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn replicate_pad(x: &Tensor, pad: usize) -> Result<Tensor> {
    if pad == 0 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    let top = x.narrow(2, 0, 1)?.repeat((1, 1, pad, 1))?;
    let bottom = x.narrow(2, h - 1, 1)?.repeat((1, 1, pad, 1))?;
    let x = Tensor::cat(&[&top, x, &bottom], 2)?;
    let left = x.narrow(3, 0, 1)?.repeat((1, 1, 1, pad))?;
    let right = x.narrow(3, w - 1, 1)?.repeat((1, 1, 1, pad))?;
    Ok(Tensor::cat(&[&left, &x, &right], 3)?)
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(x: &Tensor, kernel: usize, sigma: f64) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let taps = gaussian_taps(kernel, sigma);
    let p = kernel / 2;
    let padded = replicate_pad(x, p)?;
    let mut rows: Option<Tensor> = None;
    for (i, t) in taps.iter().enumerate() {
        let term = (padded.narrow(2, i, h)? * *t)?;
        rows = Some(match rows {
            None => term,
            Some(acc) => (acc + term)?,
        });
    }
    let rows = rows.expect("kernel is nonempty");
    let mut out: Option<Tensor> = None;
    for (i, t) in taps.iter().enumerate() {
        let term = (rows.narrow(3, i, w)? * *t)?;
        out = Some(match out {
            None => term,
            Some(acc) => (acc + term)?,
        });
    }
    Ok(out.expect("kernel is nonempty"))
}

fn to_f64_vec(x: &Tensor) -> Result<Vec<f64>> {
    Ok(x.detach().to_dtype(DType::F64)?.flatten_all()?.to_vec1()?)
}

fn straight_through(x: &Tensor, values: Vec<f64>) -> Result<Tensor> {
    let target = Tensor::from_vec(values, x.dims(), &Device::Cpu)?.to_dtype(x.dtype())?;
    Ok((x + (target - x.detach())?.detach())?)
}

fn median_values(v: &[f64], (b, c, h, w): (usize, usize, usize, usize), kernel: usize) -> Vec<f64> {
    let p = (kernel / 2) as isize;
    let mut out = vec![0.0; v.len()];
    let mut window = Vec::with_capacity(kernel * kernel);
    for plane in 0..b * c {
        let base = plane * h * w;
        for y in 0..h {
            for x in 0..w {
                window.clear();
                for dy in -p..=p {
                    for dx in -p..=p {
                        let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                        let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        window.push(v[base + sy * w + sx]);
                    }
                }
                window.sort_by(|a, b| a.total_cmp(b));
                out[base + y * w + x] = window[window.len() / 2];
            }
        }
    }
    out
}

pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn hue_values(v: &[f64], (b, _, h, w): (usize, usize, usize, usize), shift: f64) -> Vec<f64> {
    let n = h * w;
    let mut out = vec![0.0; v.len()];
    for bi in 0..b {
        let base = bi * 3 * n;
        for i in 0..n {
            let (r, g, bl) =
                (v[base + i].clamp(0.0, 1.0), v[base + n + i].clamp(0.0, 1.0), v[base + 2 * n + i].clamp(0.0, 1.0));
            let (hh, s, vv) = rgb_to_hsv(r, g, bl);
            let (r2, g2, b2) = hsv_to_rgb(hh + shift, s, vv);
            out[base + i] = r2;
            out[base + n + i] = g2;
            out[base + 2 * n + i] = b2;
        }
    }
    out
}

/// Applies `d` to a single-image or batched `[b, 3, h, w]` tensor. With
/// `differentiable` JPEG uses the cubic surrogate; otherwise exact rounding.
pub fn apply_tensor<R: Rng + ?Sized>(x: &Tensor, d: &Degradation, differentiable: bool, rng: &mut R) -> Result<Tensor> {
    let dims = x.dims4()?;
    if dims.1 != 3 {
        return Err(Error::shape(format!("degradations expect RGB tensors, got {:?}", x.dims())));
    }
    let out = match *d {
        Degradation::None => return Ok(x.clone()),
        Degradation::GaussianNoise { sigma } => {
            if sigma == 0.0 {
                return Ok(x.clone());
            }
            let std = sigma / 255.0;
            let noise: Vec<f64> = (0..x.elem_count())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    std * z
                })
                .collect();
            let noise = Tensor::from_vec(noise, x.dims(), &Device::Cpu)?.to_dtype(x.dtype())?;
            (x + noise)?
        }
        Degradation::Jpeg { quality } => {
            let mode = if differentiable { Rounding::Cubic } else { Rounding::Hard };
            jpeg_tensor(x, &vec![quality; dims.0], mode)?
        }
        Degradation::GaussianFilter { kernel, sigma } => gaussian_blur(x, kernel, sigma)?,
        Degradation::MedianFilter { kernel } => straight_through(x, median_values(&to_f64_vec(x)?, dims, kernel))?,
        Degradation::PoissonNoise { alpha } => {
            let scale = 255.0 * alpha;
            let vals: Vec<f64> = to_f64_vec(x)?
                .into_iter()
                .map(|v| {
                    let lambda = v.clamp(0.0, 1.0) * scale;
                    if lambda <= 0.0 {
                        0.0
                    } else {
                        let k: f64 = Poisson::new(lambda).expect("positive rate").sample(rng);
                        k / scale
                    }
                })
                .collect();
            straight_through(x, vals)?
        }
        Degradation::Hue { shift } => straight_through(x, hue_values(&to_f64_vec(x)?, dims, shift))?,
        Degradation::Brightness { factor } => (x * factor)?,
        Degradation::Contrast { factor } => {
            let mean = x.mean_keepdim(3)?.mean_keepdim(2)?.mean_keepdim(1)?;
            x.broadcast_sub(&mean)?.affine(factor, 0.0)?.broadcast_add(&mean)?
        }
    };
    Ok(out.clamp(0.0, 1.0)?)
}

/// Applies one degradation per batch element.
pub fn apply_batch<R: Rng + ?Sized>(
    x: &Tensor,
    ds: &[Degradation],
    differentiable: bool,
    rng: &mut R,
) -> Result<Tensor> {
    let b = x.dim(0)?;
    if ds.len() != b {
        return Err(Error::shape(format!("{} degradations for a batch of {b}", ds.len())));
    }
    if ds.iter().all(|d| *d == Degradation::None) {
        return Ok(x.clone());
    }
    let parts =
        (0..b).map(|i| apply_tensor(&x.narrow(0, i, 1)?, &ds[i], differentiable, rng)).collect::<Result<Vec<_>>>()?;
    Ok(Tensor::cat(&parts, 0)?)
}

/// Image-level application (exact rounding for JPEG).
pub fn apply_degradation<R: Rng + ?Sized>(img: &ImagePlane, d: &Degradation, rng: &mut R) -> Result<ImagePlane> {
    if *d == Degradation::None {
        return Ok(img.clone());
    }
    tensor_to_plane(&apply_tensor(&plane_to_tensor(img, DType::F32)?, d, false, rng)?)
}

/// Samples one degradation from `preset` and applies it.
pub fn random_degradation<R: Rng + ?Sized>(
    img: &ImagePlane,
    preset: &DegradationPreset,
    rng: &mut R,
) -> Result<(ImagePlane, Degradation)> {
    let d = preset.sample(rng);
    Ok((apply_degradation(img, &d, rng)?, d))
}
