//! Differentiable baseline JPEG.
//!
//! JFIF YCbCr without chroma subsampling, 8x8 orthonormal DCT, IJG-scaled
//! quantization tables. Rounding is either exact or the cubic surrogate
//! `r + (x - r)^3` with `r = round(x)` held constant, whose derivative is
//! `3 (x - r)^2`.

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

const LUMA_Q: [u8; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69, 56, 14, 17, 22, 29, 51,
    87, 80, 62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

const CHROMA_Q: [u8; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rounding {
    Hard,
    /// Cubic soft rounding with a non-zero gradient.
    Cubic,
}

/// IJG quality scaling of a base table.
pub fn scaled_table(base: &[u8; 64], quality: u8) -> [f64; 64] {
    let q = quality.clamp(1, 100) as i64;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((b as i64 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    out
}

pub fn luma_table(quality: u8) -> [f64; 64] {
    scaled_table(&LUMA_Q, quality)
}

pub fn chroma_table(quality: u8) -> [f64; 64] {
    scaled_table(&CHROMA_Q, quality)
}

/// Orthonormal DCT-II matrix, `D[k][n]`.
pub fn dct_matrix() -> [[f64; 8]; 8] {
    let mut d = [[0.0; 8]; 8];
    for (k, row) in d.iter_mut().enumerate() {
        let a = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (n, v) in row.iter_mut().enumerate() {
            *v = a * (((2 * n + 1) as f64 * k as f64 * std::f64::consts::PI) / 16.0).cos();
        }
    }
    d
}

fn round_with(x: &Tensor, mode: Rounding) -> Result<Tensor> {
    let r = x.detach().round()?;
    Ok(match mode {
        Rounding::Hard => r,
        Rounding::Cubic => (&r + (x - &r)?.powf(3.0)?)?,
    })
}

fn color_matrix(rows: [[f64; 3]; 3], dtype: DType) -> Result<Tensor> {
    let v: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Tensor::from_vec(v, (3, 3, 1, 1), &Device::Cpu)?.to_dtype(dtype)?)
}

const RGB_TO_YCC: [[f64; 3]; 3] = [[0.299, 0.587, 0.114], [-0.168_736, -0.331_264, 0.5], [0.5, -0.418_688, -0.081_312]];
const YCC_TO_RGB: [[f64; 3]; 3] = [[1.0, 0.0, 1.402], [1.0, -0.344_136, -0.714_136], [1.0, 1.772, 0.0]];

/// `[n, 8, 8] x [8, 8]` as one 2D product.
fn right_mul(x: &Tensor, m: &Tensor) -> Result<Tensor> {
    let n = x.dim(0)?;
    Ok(x.reshape((n * 8, 8))?.matmul(m)?.reshape((n, 8, 8))?)
}

fn transpose(x: &Tensor) -> Result<Tensor> {
    Ok(x.transpose(1, 2)?.contiguous()?)
}

/// JPEG round trip of `[b, 3, h, w]` images in `[0, 1]`, one quality per batch
/// element. `h` and `w` must be multiples of 8. Output is clipped to `[0, 1]`.
pub fn jpeg_tensor(x: &Tensor, qualities: &[u8], rounding: Rounding) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if c != 3 || h % 8 != 0 || w % 8 != 0 {
        return Err(Error::shape(format!("JPEG needs [b, 3, 8k, 8m] input, got {:?}", x.dims())));
    }
    if qualities.len() != b {
        return Err(Error::shape(format!("{} qualities for a batch of {b}", qualities.len())));
    }
    let dtype = x.dtype();
    let dev = Device::Cpu;
    // Level-shifted YCbCr on the 0-255 scale: every component centres on 0.
    let ycc = crate::nn::conv2d_same(&(x * 255.0)?, &color_matrix(RGB_TO_YCC, dtype)?)?;
    let shift = Tensor::from_vec(vec![128.0f64, 0.0, 0.0], (1, 3, 1, 1), &dev)?.to_dtype(dtype)?;
    let ycc = ycc.broadcast_sub(&shift)?;

    let (bh, bw) = (h / 8, w / 8);
    let n = b * 3 * bh * bw;
    let blocks = ycc.reshape((b, 3, bh, 8, bw, 8))?.permute((0, 1, 2, 4, 3, 5))?.reshape((n, 8, 8))?;
    let dm: Vec<f64> = dct_matrix().iter().flatten().copied().collect();
    let dct = Tensor::from_vec(dm, (8, 8), &dev)?.to_dtype(dtype)?;
    let dct_t = dct.t()?.contiguous()?;
    // D B D^T = t(t(B D^T) D^T)
    let coef = transpose(&right_mul(&transpose(&right_mul(&blocks, &dct_t)?)?, &dct_t)?)?;
    let coef = coef.reshape((b, 3, bh * bw, 8, 8))?;

    let mut tables = Vec::with_capacity(b * 3 * 64);
    for &q in qualities {
        let (l, ch) = (luma_table(q), chroma_table(q));
        tables.extend_from_slice(&l);
        tables.extend_from_slice(&ch);
        tables.extend_from_slice(&ch);
    }
    let qt = Tensor::from_vec(tables, (b, 3, 1, 8, 8), &dev)?.to_dtype(dtype)?;
    let quantized = round_with(&coef.broadcast_div(&qt)?, rounding)?.broadcast_mul(&qt)?;

    let quantized = quantized.reshape((n, 8, 8))?;
    // D^T C D = t(t(C D) D)
    let spatial = transpose(&right_mul(&transpose(&right_mul(&quantized, &dct)?)?, &dct)?)?;
    let spatial = spatial.reshape((b, 3, bh, bw, 8, 8))?.permute((0, 1, 2, 4, 3, 5))?.reshape((b, 3, h, w))?;
    // The inverse matrix has a unit first column, so undoing the luma shift is
    // a uniform +128 on every RGB channel.
    let rgb = (crate::nn::conv2d_same(&spatial, &color_matrix(YCC_TO_RGB, dtype)?)? + 128.0)?;
    // True division keeps 8-bit levels bit-exact (a reciprocal multiply does not).
    let scale = Tensor::full(255.0f64, (1, 1, 1, 1), &dev)?.to_dtype(dtype)?;
    Ok(rgb.broadcast_div(&scale)?.clamp(0.0, 1.0)?)
}
