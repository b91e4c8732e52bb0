//! The assembled recovery pipeline.
//!
//! Embedding: original -> generator (optional) -> shuffle -> watermarking
//! network with the original as cover. Recovery: attacked -> noise estimate
//! -> extraction -> unshuffle -> generator inverse (optional) -> enhancer
//! (optional) -> composite under the localizer's mask.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::enhance::{EnhanceConfig, Enhancer};
use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, WatermarkGenerator};
use crate::localize::{binarize, composite_tensor, LocalizeConfig, Localizer};
use crate::nn::{plane_to_tensor, tensor_to_masks, tensor_to_plane, ParamStore};
use crate::plane::{ImagePlane, TamperMask};
use crate::shuffle::{ShuffleKey, Shuffler};
use crate::watermark::{WatermarkConfig, WatermarkNet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub use_shuffle: bool,
    pub use_generator: bool,
    pub use_enhancer: bool,
    pub shuffle: ShuffleKey,
    pub watermark: WatermarkConfig,
    pub generator: GeneratorConfig,
    pub enhance: EnhanceConfig,
    pub localize: LocalizeConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            use_shuffle: true,
            use_generator: true,
            use_enhancer: true,
            shuffle: ShuffleKey::default(),
            watermark: WatermarkConfig::default(),
            generator: GeneratorConfig::default(),
            enhance: EnhanceConfig::default(),
            localize: LocalizeConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let s = self.image_size;
        let g = 1usize << self.localize.levels;
        if s == 0 || !s.is_multiple_of(8) || !s.is_multiple_of(g) || !s.is_multiple_of(self.generator.patch) {
            return Err(Error::config(format!(
                "image_size {s} must be a positive multiple of 8, of {g} and of the generator patch"
            )));
        }
        self.shuffle.validate(s, s)?;
        self.watermark.validate()?;
        if self.use_generator {
            self.generator.validate()?;
        }
        Ok(())
    }
}

/// Tensors produced while embedding a batch.
#[derive(Debug, Clone)]
pub struct Embedded {
    pub secret: Tensor,
    pub shuffled: Tensor,
    pub container: Tensor,
    pub noise: Tensor,
}

/// Tensors produced while recovering a batch. `mask` is soft.
#[derive(Debug, Clone)]
pub struct Recovered {
    pub noise: Tensor,
    pub cover: Tensor,
    pub shuffled: Tensor,
    pub secret: Tensor,
    pub original: Tensor,
    pub enhanced: Tensor,
    pub mask: Tensor,
}

/// Image-level recovery outputs.
#[derive(Debug, Clone)]
pub struct Recovery {
    pub shuffled_secret: ImagePlane,
    pub secret: ImagePlane,
    pub original: ImagePlane,
    pub enhanced: ImagePlane,
    pub soft_mask: TamperMask,
    pub mask: TamperMask,
    pub recovered: ImagePlane,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: ModelConfig,
    ps: ParamStore,
    iw: WatermarkNet,
    wg: Option<WatermarkGenerator>,
    ie: Option<Enhancer>,
    tl: Localizer,
    shuffler: Shuffler,
}

impl Pipeline {
    pub fn new(cfg: &ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let ps = ParamStore::new(seed, dtype);
        let iw = WatermarkNet::new(&ps.pp("iw"), &cfg.watermark)?;
        let wg = if cfg.use_generator { Some(WatermarkGenerator::new(&ps.pp("wg"), &cfg.generator)?) } else { None };
        let ie = if cfg.use_enhancer { Some(Enhancer::new(&ps.pp("ie"), &cfg.enhance)?) } else { None };
        let tl = Localizer::new(&ps.pp("tl"), &cfg.localize)?;
        let s = cfg.image_size;
        let shuffler = if cfg.use_shuffle { Shuffler::new(cfg.shuffle, s, s)? } else { Shuffler::identity(s, s) };
        Ok(Self { cfg: cfg.clone(), ps, iw, wg, ie, tl, shuffler })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.ps
    }

    pub fn dtype(&self) -> DType {
        self.ps.dtype()
    }

    pub fn shuffler(&self) -> &Shuffler {
        &self.shuffler
    }

    pub fn watermark(&self) -> &WatermarkNet {
        &self.iw
    }

    pub fn generator(&self) -> Option<&WatermarkGenerator> {
        self.wg.as_ref()
    }

    pub fn embed_tensor(&self, org: &Tensor) -> Result<Embedded> {
        let secret = match &self.wg {
            Some(g) => g.forward_tensor(org)?,
            None => org.clone(),
        };
        let shuffled = self.shuffler.shuffle_tensor(&secret)?;
        let (container, noise) = self.iw.embed_tensor(org, &shuffled)?;
        Ok(Embedded { secret, shuffled, container, noise })
    }

    pub fn recover_tensor(&self, attacked: &Tensor) -> Result<Recovered> {
        let noise = self.iw.estimate_noise_tensor(attacked)?;
        let (cover, shuffled) = self.iw.extract_tensor(attacked, &noise)?;
        let secret = self.shuffler.unshuffle_tensor(&shuffled)?;
        let original = match &self.wg {
            Some(g) => g.inverse_tensor(&secret)?,
            None => secret.clone(),
        };
        let enhanced = match &self.ie {
            Some(e) => e.forward_tensor(&original)?,
            None => original.clone(),
        };
        let mask = self.tl.forward_tensor(attacked, &shuffled)?;
        Ok(Recovered { noise, cover, shuffled, secret, original, enhanced, mask })
    }

    fn check_size(&self, img: &ImagePlane) -> Result<()> {
        let s = self.cfg.image_size;
        if img.dims() != (s, s) {
            return Err(Error::shape(format!("model expects {s}x{s} images, got {}x{}", img.width(), img.height())));
        }
        Ok(())
    }

    /// Container for one image, unclipped.
    pub fn embed(&self, org: &ImagePlane) -> Result<ImagePlane> {
        self.check_size(org)?;
        tensor_to_plane(&self.embed_tensor(&plane_to_tensor(org, self.dtype())?)?.container)
    }

    pub fn recover(&self, attacked: &ImagePlane) -> Result<Recovery> {
        self.check_size(attacked)?;
        let att = plane_to_tensor(attacked, self.dtype())?;
        let r = self.recover_tensor(&att)?;
        let soft_mask = tensor_to_masks(&r.mask)?.remove(0);
        let mask = binarize(&soft_mask, self.cfg.localize.threshold);
        let used = if self.cfg.localize.soft_composite { &soft_mask } else { &mask };
        let enhanced = tensor_to_plane(&r.enhanced)?;
        let recovered = crate::localize::composite(&enhanced, attacked, used)?;
        Ok(Recovery {
            shuffled_secret: tensor_to_plane(&r.shuffled)?,
            secret: tensor_to_plane(&r.secret)?,
            original: tensor_to_plane(&r.original)?,
            enhanced,
            soft_mask,
            mask,
            recovered,
        })
    }

    /// Composite used in training: soft mask, differentiable.
    pub fn composite_tensor(&self, r: &Recovered, attacked: &Tensor) -> Result<Tensor> {
        composite_tensor(&r.enhanced, attacked, &r.mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic_image;

    pub(crate) fn tiny_model() -> ModelConfig {
        ModelConfig {
            image_size: 16,
            shuffle: ShuffleKey::new(7, 1),
            watermark: WatermarkConfig { blocks: 2, growth: 4, noise_width: 4, ..Default::default() },
            generator: GeneratorConfig { blocks: 1, dim: 8, heads: 2, up_channels: 4, ..Default::default() },
            enhance: EnhanceConfig { blocks: 1, width: 4, ..Default::default() },
            localize: LocalizeConfig { levels: 2, base: 4, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn zero_init_pipeline_round_trips() {
        let p = Pipeline::new(&tiny_model(), 0, DType::F32).unwrap();
        let org = synthetic_image(1, 16, 3);
        let container = p.embed(&org).unwrap();
        let err = org.data().iter().zip(container.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(err < 1e-5, "{err}");
        let r = p.recover(&container).unwrap();
        assert_eq!(r.recovered.dims(), (16, 16));
        assert!(r.soft_mask.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rejects_wrong_sizes() {
        let p = Pipeline::new(&tiny_model(), 0, DType::F32).unwrap();
        assert!(p.embed(&ImagePlane::new(8, 8)).is_err());
        let bad = ModelConfig { image_size: 20, ..tiny_model() };
        assert!(Pipeline::new(&bad, 0, DType::F32).is_err());
    }

    #[test]
    fn ablation_flags_drop_modules() {
        let cfg = ModelConfig { use_generator: false, use_enhancer: false, use_shuffle: false, ..tiny_model() };
        let p = Pipeline::new(&cfg, 0, DType::F32).unwrap();
        assert!(p.generator().is_none());
        assert!(p.shuffler().is_identity());
        assert!(p.params().named_vars().iter().all(|(n, _)| !n.starts_with("wg.") && !n.starts_with("ie.")));
    }
}
