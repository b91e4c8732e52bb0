//! Held-out evaluation: embed, export to 8 bits, attack, recover, score.

use serde::{Deserialize, Serialize};

use crate::degrade::{apply_degradation, generate_mask, splice, DegradationPreset, MaskSpec};
use crate::error::{Error, Result};
use crate::metrics::{auc, f1, iou, psnr, ssim, ImageMetrics, MetricReport};
use crate::plane::{ImagePlane, TamperMask};

use super::pipeline::{Pipeline, Recovery};
use super::trainer::sample_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    /// Replace a masked region with another evaluation image.
    Splice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub attack: AttackKind,
    /// `None` scales the reference mask spec to the image size.
    pub mask: Option<MaskSpec>,
    /// Degradation preset applied after the attack.
    pub degradation: String,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { attack: AttackKind::Splice, mask: None, degradation: "none".into(), seed: 1 }
    }
}

/// Everything produced for one evaluated image.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub container: ImagePlane,
    pub attacked: ImagePlane,
    pub truth: TamperMask,
    pub recovery: Recovery,
    pub metrics: ImageMetrics,
}

/// Scores one image. `donor` supplies the spliced content.
pub fn evaluate_one(
    p: &Pipeline,
    name: &str,
    original: &ImagePlane,
    donor: &ImagePlane,
    cfg: &EvalConfig,
    preset: &DegradationPreset,
    index: usize,
) -> Result<EvalSample> {
    let s = p.config().image_size;
    let mut rng = sample_rng(cfg.seed, 0, index);
    let container = p.embed(original)?.quantized();
    let (spliced, truth) = match cfg.attack {
        AttackKind::None => (container.clone(), TamperMask::zeros(s, s)),
        AttackKind::Splice => {
            let spec = cfg.mask.clone().unwrap_or_else(|| MaskSpec::for_image_size(s));
            let (m, _) = generate_mask(&spec, s, s, &mut rng)?;
            (splice(&container, donor, &m)?, m)
        }
    };
    let d = preset.sample(&mut rng);
    let attacked = apply_degradation(&spliced, &d, &mut rng)?.quantized();
    score(p, name, original, container, attacked, truth)
}

/// Recovers `attacked` and scores it against the original, the 8-bit
/// container and the ground-truth tamper mask.
pub fn score(
    p: &Pipeline,
    name: &str,
    original: &ImagePlane,
    container: ImagePlane,
    attacked: ImagePlane,
    truth: TamperMask,
) -> Result<EvalSample> {
    if truth.dims() != attacked.dims() {
        return Err(Error::shape("ground-truth mask and attacked image sizes differ"));
    }
    let recovery = p.recover(&attacked)?;
    let recovered = recovery.recovered.clipped();
    let any_tamper = truth.data().iter().any(|v| *v >= 0.5);
    let metrics = ImageMetrics {
        name: name.to_string(),
        container_psnr: psnr(&container, original, None)?,
        container_ssim: Some(ssim(&container, original)?),
        attacked_psnr: psnr(&attacked, original, None)?,
        recovered_psnr: psnr(&recovered, original, None)?,
        recovered_ssim: Some(ssim(&recovered, original)?),
        masked_psnr: if any_tamper { psnr(&recovered, original, Some(&truth))? } else { None },
        iou: Some(iou(&recovery.mask, &truth)?),
        f1: Some(f1(&recovery.mask, &truth)?),
        auc: auc(&recovery.soft_mask, &truth)?,
    };
    Ok(EvalSample { container, attacked, truth, recovery, metrics })
}

/// Evaluates every image; image `i` takes its donor from image `i + 1`.
pub fn evaluate(
    p: &Pipeline,
    images: &[(String, ImagePlane)],
    cfg: &EvalConfig,
    preset: &DegradationPreset,
) -> Result<MetricReport> {
    if images.len() < 2 && cfg.attack == AttackKind::Splice {
        return Err(Error::config("splice evaluation needs at least two images"));
    }
    let mut report = MetricReport::default();
    for (i, (name, img)) in images.iter().enumerate() {
        let donor = &images[(i + 1) % images.len()].1;
        report.push(evaluate_one(p, name, img, donor, cfg, preset, i)?.metrics);
    }
    Ok(report)
}
