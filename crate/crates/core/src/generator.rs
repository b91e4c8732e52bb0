//! Watermark generator: a small invertible network with transformer subnets
//! that turns the original image into a smooth secret image, plus its
//! approximate inverse and the total-variation penalty that drives it.
//!
//! `forward(org)` is the first output branch of the stack applied to
//! `(org, org)`; `inverse(sec)` is the first branch of the inverse applied to
//! `(sec, sec)`. The second branches are discarded, so the inverse is exact
//! only while the subnets are zero.

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inn::{CouplingBlock, Inn, Subnet};
use crate::nn::{plane_to_tensor, tensor_to_plane, LayerNorm, Linear, ParamStore, UpConv2x, WeightInit};
use crate::plane::{ImagePlane, CHANNELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub blocks: usize,
    pub patch: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Channels between the two upsampling stages.
    pub up_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { blocks: 3, patch: 4, dim: 192, heads: 6, mlp_ratio: 2, up_channels: 32 }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.dim == 0 || self.heads == 0 || self.mlp_ratio == 0 || self.up_channels == 0 {
            return Err(Error::config("generator sizes must be positive"));
        }
        if self.patch != 4 {
            return Err(Error::config("generator patch size must be 4 (two 2x upsamplers restore the grid)"));
        }
        if !self.dim.is_multiple_of(self.heads) || !self.dim.is_multiple_of(4) {
            return Err(Error::config("generator dim must be divisible by heads and by 4"));
        }
        Ok(())
    }
}

/// Fixed 2D sinusoidal position code, `[gh * gw, dim]`: the first half of the
/// features encodes the row, the second half the column.
pub fn sinusoidal_positions(gh: usize, gw: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let quarter = half / 2;
    let mut out = vec![0.0; gh * gw * dim];
    for y in 0..gh {
        for x in 0..gw {
            let row = &mut out[(y * gw + x) * dim..][..dim];
            for (offset, pos) in [(0, y as f64), (half, x as f64)] {
                for i in 0..quarter {
                    let freq = 1.0 / 10000f64.powf(i as f64 / quarter as f64);
                    row[offset + 2 * i] = (pos * freq).sin();
                    row[offset + 2 * i + 1] = (pos * freq).cos();
                }
            }
        }
    }
    out
}

/// Patch embedding, one pre-norm encoder layer and two 2x upsamplers back
/// to image resolution. The last upsampler is zero-initialized.
#[derive(Debug, Clone)]
pub struct TransformerSubnet {
    cfg: GeneratorConfig,
    embed: Linear,
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    up1: UpConv2x,
    up2: UpConv2x,
}

impl TransformerSubnet {
    pub fn new(ps: &ParamStore, cfg: &GeneratorConfig) -> Result<Self> {
        let d = cfg.dim;
        let pin = CHANNELS * cfg.patch * cfg.patch;
        let k = WeightInit::Kaiming(0.0);
        Ok(Self {
            cfg: cfg.clone(),
            embed: Linear::new(&ps.pp("embed"), pin, d, k)?,
            ln1: LayerNorm::new(&ps.pp("ln1"), d)?,
            qkv: Linear::new(&ps.pp("qkv"), d, 3 * d, k)?,
            proj: Linear::new(&ps.pp("proj"), d, d, k)?,
            ln2: LayerNorm::new(&ps.pp("ln2"), d)?,
            fc1: Linear::new(&ps.pp("fc1"), d, cfg.mlp_ratio * d, k)?,
            fc2: Linear::new(&ps.pp("fc2"), cfg.mlp_ratio * d, d, k)?,
            up1: UpConv2x::new(&ps.pp("up1"), d, cfg.up_channels, k)?,
            up2: UpConv2x::new(&ps.pp("up2"), cfg.up_channels, CHANNELS, WeightInit::Zeros)?,
        })
    }

    fn attention(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, d) = x.dims3()?;
        let heads = self.cfg.heads;
        let hd = d / heads;
        let qkv = self.qkv.forward(x)?.reshape((b, n, 3, heads, hd))?.permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (hd as f64).sqrt())?;
        let att = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let out = att.matmul(&v)?.transpose(1, 2)?.reshape((b, n, d))?;
        self.proj.forward(&out)
    }
}

impl Subnet for TransformerSubnet {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let p = self.cfg.patch;
        if c != CHANNELS || h % p != 0 || w % p != 0 {
            return Err(Error::config(format!("generator subnet needs [b, 3, {p}k, {p}m], got {:?}", x.dims())));
        }
        let (gh, gw) = (h / p, w / p);
        let d = self.cfg.dim;
        let patches = candle_nn::ops::pixel_unshuffle(x, p)?.flatten_from(2)?.transpose(1, 2)?;
        let pos = Tensor::from_vec(sinusoidal_positions(gh, gw, d), (gh * gw, d), &Device::Cpu)?.to_dtype(x.dtype())?;
        let t = self.embed.forward(&patches)?.broadcast_add(&pos)?;
        let t = (&t + self.attention(&self.ln1.forward(&t)?)?)?;
        let t = (&t + self.fc2.forward(&self.fc1.forward(&self.ln2.forward(&t)?)?.gelu()?)?)?;
        let grid = t.transpose(1, 2)?.reshape((b, d, gh, gw))?;
        self.up2.forward(&self.up1.forward(&grid)?.gelu()?)
    }
}

#[derive(Debug, Clone)]
pub struct WatermarkGenerator {
    inn: Inn<TransformerSubnet>,
    dtype: DType,
}

impl WatermarkGenerator {
    pub fn new(ps: &ParamStore, cfg: &GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let blocks = (0..cfg.blocks)
            .map(|l| {
                let bp = ps.pp(format!("block{l}"));
                Ok(CouplingBlock {
                    phi: TransformerSubnet::new(&bp.pp("phi"), cfg)?,
                    rho: TransformerSubnet::new(&bp.pp("rho"), cfg)?,
                    eta: TransformerSubnet::new(&bp.pp("eta"), cfg)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { inn: Inn::new(blocks)?, dtype: ps.dtype() })
    }

    pub fn forward_tensor(&self, org: &Tensor) -> Result<Tensor> {
        Ok(self.inn.forward(org, org)?.0)
    }

    pub fn inverse_tensor(&self, sec: &Tensor) -> Result<Tensor> {
        Ok(self.inn.inverse(sec, sec)?.0)
    }

    pub fn forward(&self, org: &ImagePlane) -> Result<ImagePlane> {
        tensor_to_plane(&self.forward_tensor(&plane_to_tensor(org, self.dtype)?)?)
    }

    pub fn inverse(&self, sec: &ImagePlane) -> Result<ImagePlane> {
        tensor_to_plane(&self.inverse_tensor(&plane_to_tensor(sec, self.dtype)?)?)
    }
}

/// Sum over `i < h-1, j < w-1` of squared vertical and horizontal forward
/// differences, for one `c x h x w` channel-planar array.
pub fn tv_sum(data: &[f64], c: usize, h: usize, w: usize) -> f64 {
    if h < 2 || w < 2 {
        log::warn!("total variation of a {h}x{w} image is defined as 0");
        return 0.0;
    }
    let mut s = 0.0;
    for ch in 0..c {
        let plane = &data[ch * h * w..(ch + 1) * h * w];
        for i in 0..h - 1 {
            for j in 0..w - 1 {
                let v = plane[i * w + j];
                s += (plane[(i + 1) * w + j] - v).powi(2) + (plane[i * w + j + 1] - v).powi(2);
            }
        }
    }
    s
}

/// Total variation of an image, summed over channels.
pub fn tv_loss(img: &ImagePlane) -> f64 {
    let data: Vec<f64> = img.data().iter().map(|v| *v as f64).collect();
    tv_sum(&data, CHANNELS, img.height(), img.width())
}

/// Differentiable total variation of `[b, c, h, w]`, averaged over the
/// `2 * b * c * (h-1) * (w-1)` difference terms.
pub fn tv_loss_tensor(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if h < 2 || w < 2 {
        log::warn!("total variation of a {h}x{w} image is defined as 0");
        return Ok(Tensor::zeros((), x.dtype(), x.device())?);
    }
    let base = x.narrow(2, 0, h - 1)?.narrow(3, 0, w - 1)?;
    let down = x.narrow(2, 1, h - 1)?.narrow(3, 0, w - 1)?;
    let right = x.narrow(2, 0, h - 1)?.narrow(3, 1, w - 1)?;
    let s = ((down - &base)?.sqr()?.sum_all()? + (right - &base)?.sqr()?.sum_all()?)?;
    Ok((s / (2 * b * c * (h - 1) * (w - 1)) as f64)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{randomize_params, seeded_normal};
    use candle_core::Var;

    fn tiny() -> GeneratorConfig {
        GeneratorConfig { blocks: 2, patch: 4, dim: 16, heads: 2, mlp_ratio: 2, up_channels: 4 }
    }

    fn image() -> ImagePlane {
        ImagePlane::from_fn(16, 16, |c, y, x| 0.5 + 0.4 * ((x as f32 * 0.3 + c as f32).sin() * (y as f32 * 0.2).cos()))
    }

    #[test]
    fn zero_init_generator_is_identity_both_ways() {
        let ps = ParamStore::new(0, DType::F32);
        let g = WatermarkGenerator::new(&ps, &tiny()).unwrap();
        let img = image();
        let sec = g.forward(&img).unwrap();
        assert_eq!(sec, img);
        assert_eq!(g.inverse(&sec).unwrap(), img);
    }

    #[test]
    fn random_generator_preserves_shape() {
        let ps = ParamStore::new(0, DType::F32);
        let g = WatermarkGenerator::new(&ps, &tiny()).unwrap();
        randomize_params(&ps, 4, 0.1).unwrap();
        let out = g.forward(&image()).unwrap();
        assert_eq!(out.dims(), (16, 16));
        assert_ne!(out, image());
    }

    #[test]
    fn tv_hand_examples() {
        assert_eq!(tv_sum(&[0.0, 1.0, 1.0, 0.0], 1, 2, 2), 2.0);
        let checker: Vec<f64> = (0..16).map(|i| ((i / 4 + i % 4) % 2) as f64).collect();
        assert_eq!(tv_sum(&checker, 1, 4, 4), 18.0);
        assert_eq!(tv_loss(&ImagePlane::filled(5, 4, 0.3)), 0.0);
        assert_eq!(tv_sum(&[0.0, 1.0, 0.0], 1, 1, 3), 0.0);
    }

    #[test]
    fn tv_tensor_is_normalized_sum() {
        let x = seeded_normal(1, &[2, 3, 5, 6], 1.0, DType::F64).unwrap();
        let data: Vec<f64> = x.flatten_all().unwrap().to_vec1().unwrap();
        let sum: f64 = (0..2).map(|b| tv_sum(&data[b * 90..(b + 1) * 90], 3, 5, 6)).sum();
        let mean: f64 = tv_loss_tensor(&x).unwrap().to_scalar().unwrap();
        assert!((mean - sum / (2.0 * 2.0 * 3.0 * 4.0 * 5.0)).abs() < 1e-12);
    }

    #[test]
    fn tv_gradient_matches_finite_differences() {
        let x0 = seeded_normal(2, &[1, 2, 4, 4], 1.0, DType::F64).unwrap();
        let x = Var::from_tensor(&x0).unwrap();
        let g = tv_loss_tensor(x.as_tensor()).unwrap().backward().unwrap();
        let an: Vec<f64> = g.get(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let base: Vec<f64> = x0.flatten_all().unwrap().to_vec1().unwrap();
        let eps = 1e-6;
        for i in 0..base.len() {
            let mut p = base.clone();
            let mut m = base.clone();
            p[i] += eps;
            m[i] -= eps;
            let fd = (tv_sum(&p, 2, 4, 4) - tv_sum(&m, 2, 4, 4)) / (2.0 * eps) / (2.0 * 2.0 * 9.0);
            let rel = (fd - an[i]).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-3 || (fd - an[i]).abs() < 1e-9, "{i}: {fd} vs {}", an[i]);
        }
    }

    #[test]
    fn positions_are_distinct() {
        let p = sinusoidal_positions(4, 4, 16);
        for a in 0..16 {
            for b in a + 1..16 {
                let d: f64 = (0..16).map(|k| (p[a * 16 + k] - p[b * 16 + k]).powi(2)).sum();
                assert!(d > 1e-6);
            }
        }
    }
}
