//! Loss terms and their weighted sum. Every L2 term is a mean over elements.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{masks_to_tensor, plane_to_tensor};
use crate::plane::{ImagePlane, TamperMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Mix-in weight of the perceptual term inside the watermark and
    /// enhancement losses.
    pub lambda: f64,
    pub w: f64,
    pub e: f64,
    pub tv: f64,
    pub wg: f64,
    pub ie: f64,
    pub tl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: 10.0, w: 150.0, e: 10.0, tv: 10.0, wg: 10.0, ie: 20.0, tl: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda, self.w, self.e, self.tv, self.wg, self.ie, self.tl];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config("loss weights must be finite and nonnegative"));
        }
        Ok(())
    }

    fn component_weights(&self) -> [f64; 6] {
        [self.w, self.e, self.tv, self.wg, self.ie, self.tl]
    }
}

/// One value per loss term, in weight order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents<T> {
    pub w: T,
    pub e: T,
    pub tv: T,
    pub wg: T,
    pub ie: T,
    pub tl: T,
}

pub const COMPONENT_NAMES: [&str; 6] = ["w", "e", "tv", "wg", "ie", "tl"];

impl<T> LossComponents<T> {
    pub fn as_array(&self) -> [&T; 6] {
        [&self.w, &self.e, &self.tv, &self.wg, &self.ie, &self.tl]
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> Result<U>) -> Result<LossComponents<U>> {
        Ok(LossComponents {
            w: f(&self.w)?,
            e: f(&self.e)?,
            tv: f(&self.tv)?,
            wg: f(&self.wg)?,
            ie: f(&self.ie)?,
            tl: f(&self.tl)?,
        })
    }
}

/// `sum_k weight_k * component_k`, halting on the first non-finite component.
pub fn loss_total(c: &LossComponents<f64>, w: &LossWeights) -> Result<f64> {
    let mut total = 0.0;
    for ((v, weight), name) in c.as_array().into_iter().zip(w.component_weights()).zip(COMPONENT_NAMES) {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { component: name });
        }
        total += weight * v;
    }
    Ok(total)
}

pub fn loss_total_tensor(c: &LossComponents<Tensor>, w: &LossWeights) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for (v, weight) in c.as_array().into_iter().zip(w.component_weights()) {
        let term = v.affine(weight, 0.0)?;
        total = Some(match total {
            None => term,
            Some(t) => (t + term)?,
        });
    }
    Ok(total.expect("six components"))
}

/// Optional perceptual term added to the L2 image losses with weight
/// `lambda`. No implementation ships; the L2 terms stand alone by default.
pub trait PerceptualLoss: Send + Sync {
    fn loss(&self, a: &Tensor, b: &Tensor) -> Result<Tensor>;
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("loss operands differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok((a - b)?.sqr()?.mean_all()?)
}

/// Mean squared error plus the optional perceptual term.
pub fn image_loss(a: &Tensor, b: &Tensor, hook: Option<&dyn PerceptualLoss>, lambda: f64) -> Result<Tensor> {
    let l2 = mse(a, b)?;
    match hook {
        Some(h) => Ok((l2 + h.loss(a, b)?.affine(lambda, 0.0)?)?),
        None => Ok(l2),
    }
}

pub fn loss_w_tensor(
    container: &Tensor,
    cover: &Tensor,
    hook: Option<&dyn PerceptualLoss>,
    lambda: f64,
) -> Result<Tensor> {
    image_loss(container, cover, hook, lambda)
}

/// Mean squared error over the pixels (and all channels) where the
/// `[b, 1, h, w]` mask is 0. A fully masked batch gives 0.
pub fn loss_e_tensor(secret: &Tensor, secret_est: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if secret.dims() != secret_est.dims() {
        return Err(Error::shape(format!("loss operands differ: {:?} vs {:?}", secret.dims(), secret_est.dims())));
    }
    let (b, c, h, w) = secret.dims4()?;
    if mask.dims() != [b, 1, h, w] {
        return Err(Error::shape(format!("mask {:?} does not fit {:?}", mask.dims(), secret.dims())));
    }
    let keep = mask.affine(-1.0, 1.0)?;
    let count = keep.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()? * c as f64;
    if count <= 0.0 {
        log::warn!("extraction loss: every pixel is masked, defined as 0");
        return Ok(Tensor::zeros((), secret.dtype(), secret.device())?);
    }
    let sq = (secret - secret_est)?.sqr()?.broadcast_mul(&keep)?;
    Ok((sq.sum_all()? / count)?)
}

fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

pub fn loss_w(container: &ImagePlane, cover: &ImagePlane) -> Result<f64> {
    container.ensure_same_dims(cover, "loss_w")?;
    scalar_f64(&mse(&plane_to_tensor(container, DType::F64)?, &plane_to_tensor(cover, DType::F64)?)?)
}

pub fn loss_e(secret: &ImagePlane, secret_est: &ImagePlane, mask: &TamperMask) -> Result<f64> {
    secret.ensure_same_dims(secret_est, "loss_e")?;
    if mask.dims() != secret.dims() {
        return Err(Error::shape("mask and image sizes differ"));
    }
    scalar_f64(&loss_e_tensor(
        &plane_to_tensor(secret, DType::F64)?,
        &plane_to_tensor(secret_est, DType::F64)?,
        &masks_to_tensor(&[mask], DType::F64)?,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_normal;
    use candle_core::Var;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ones() -> LossComponents<f64> {
        LossComponents { w: 1.0, e: 1.0, tv: 1.0, wg: 1.0, ie: 1.0, tl: 1.0 }
    }

    #[test]
    fn default_weights_sum_to_201() {
        assert_eq!(loss_total(&ones(), &LossWeights::default()).unwrap(), 201.0);
        assert_eq!(loss_total(&LossComponents::default(), &LossWeights::default()).unwrap(), 0.0);
    }

    #[test]
    fn nan_component_is_named() {
        let c = LossComponents { ie: f64::NAN, ..ones() };
        match loss_total(&c, &LossWeights::default()) {
            Err(Error::NonFiniteLoss { component }) => assert_eq!(component, "ie"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn total_matches_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = LossWeights::default();
        for _ in 0..100 {
            let v: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..5.0)).collect();
            let c = LossComponents { w: v[0], e: v[1], tv: v[2], wg: v[3], ie: v[4], tl: v[5] };
            let dot = 150.0 * v[0] + 10.0 * v[1] + 10.0 * v[2] + 10.0 * v[3] + 20.0 * v[4] + v[5];
            assert!((loss_total(&c, &w).unwrap() - dot).abs() < 1e-9);
            let t = c.map(|x| Ok(Tensor::new(*x, &candle_core::Device::Cpu)?)).unwrap();
            let tt: f64 = loss_total_tensor(&t, &w).unwrap().to_scalar().unwrap();
            assert!((tt - dot).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_w_cases() {
        let a = ImagePlane::filled(4, 3, 0.25);
        assert_eq!(loss_w(&a, &a).unwrap(), 0.0);
        let b = ImagePlane::filled(4, 3, 0.75);
        assert!((loss_w(&a, &b).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn loss_e_cases() {
        let s = ImagePlane::from_fn(4, 4, |c, y, x| (c + y * 4 + x) as f32 / 50.0);
        let e = ImagePlane::from_fn(4, 4, |c, y, x| s.get(c, y, x) + 0.1);
        let full = TamperMask::filled(4, 4, 1.0);
        assert_eq!(loss_e(&s, &e, &full).unwrap(), 0.0);
        let plain = loss_e(&s, &e, &TamperMask::zeros(4, 4)).unwrap();
        assert!((plain - 0.01).abs() < 1e-7);
        let half = TamperMask::from_data(4, 4, (0..16).map(|i| (i < 8) as u8 as f32).collect()).unwrap();
        assert!((loss_e(&s, &e, &half).unwrap() - plain).abs() < 1e-7);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let a0 = seeded_normal(1, &[1, 3, 3, 3], 1.0, DType::F64).unwrap();
        let b = seeded_normal(2, &[1, 3, 3, 3], 1.0, DType::F64).unwrap();
        let mdata: Vec<f64> = (0..9).map(|i| (i % 4 == 0) as u8 as f64).collect();
        let m = Tensor::from_vec(mdata, (1, 1, 3, 3), &candle_core::Device::Cpu).unwrap();
        let a = Var::from_tensor(&a0).unwrap();
        let f = |x: &Tensor| loss_e_tensor(x, &b, &m).unwrap().to_scalar::<f64>().unwrap();
        let g = loss_e_tensor(a.as_tensor(), &b, &m).unwrap().backward().unwrap();
        let an: Vec<f64> = g.get(&a).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let base: Vec<f64> = a0.flatten_all().unwrap().to_vec1().unwrap();
        let eps = 1e-6;
        for i in 0..base.len() {
            let at = |d: f64| {
                let mut v = base.clone();
                v[i] += d;
                f(&Tensor::from_vec(v, (1, 3, 3, 3), &candle_core::Device::Cpu).unwrap())
            };
            let fd = (at(eps) - at(-eps)) / (2.0 * eps);
            let err = (fd - an[i]).abs();
            assert!(err < 1e-9 || err / fd.abs() < 1e-3, "{i}: {fd} vs {}", an[i]);
        }
    }
}
