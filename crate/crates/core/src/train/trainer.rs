//! Joint training of every module with one optimizer.

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::degrade::{apply_tensor, generate_mask, Degradation, DegradationPreset, MaskSpec};
use crate::error::{Error, Result};
use crate::generator::tv_loss_tensor;
use crate::localize::{bce_tensor, composite_tensor};
use crate::nn::{masks_to_tensor, planes_to_tensor, scalar};
use crate::plane::{ImagePlane, TamperMask};

use super::loss::{
    image_loss, loss_e_tensor, loss_total_tensor, mse, LossComponents, LossWeights, PerceptualLoss, COMPONENT_NAMES,
};
use super::pipeline::Pipeline;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Linear learning-rate ramp over this many initial steps (0: none).
    pub warmup: usize,
    /// Name of the degradation preset applied after splicing.
    pub degradation: String,
    /// Attack masks; `None` scales the reference spec to the image size.
    pub mask: Option<MaskSpec>,
    pub seed: u64,
    /// Save a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            iterations: 2000,
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.5,
            eps: 1e-8,
            warmup: 0,
            degradation: "train".into(),
            mask: None,
            seed: 0,
            checkpoint_every: 0,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(Error::config("optimizer settings out of range"));
        }
        if let Some(m) = &self.mask {
            m.validate()?;
        }
        self.weights.validate()
    }

    pub fn mask_spec(&self, image_size: usize) -> MaskSpec {
        self.mask.clone().unwrap_or_else(|| MaskSpec::for_image_size(image_size))
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub losses: LossComponents<f64>,
    pub total: f64,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log records serialize")
    }
}

/// Independent rng stream for sample `index` of step `iteration`, so data
/// preparation does not depend on how it is split across workers.
pub fn sample_rng(seed: u64, iteration: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((iteration as u64) << 20) | index as u64);
    rng
}

const BATCH_STREAM: usize = (1 << 20) - 1;

/// Mask, degradation and leftover rng for one training sample.
struct SamplePlan {
    mask: TamperMask,
    degradation: Degradation,
    rng: ChaCha8Rng,
}

pub struct Trainer {
    pipeline: Pipeline,
    cfg: TrainConfig,
    preset: DegradationPreset,
    mask_spec: MaskSpec,
    opt: AdamW,
    iteration: usize,
    workers: usize,
    perceptual: Option<Box<dyn PerceptualLoss>>,
}

impl Trainer {
    pub fn new(pipeline: Pipeline, cfg: TrainConfig, preset: DegradationPreset) -> Result<Self> {
        cfg.validate()?;
        preset.validate()?;
        let params =
            ParamsAdamW { lr: cfg.learning_rate, beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps, weight_decay: 0.0 };
        let opt = AdamW::new(pipeline.params().all_vars(), params)?;
        let mask_spec = cfg.mask_spec(pipeline.config().image_size);
        Ok(Self { pipeline, cfg, preset, mask_spec, opt, iteration: 0, workers: 1, perceptual: None })
    }

    /// Threads used for mask generation. Results do not depend on it.
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn with_perceptual(mut self, hook: Box<dyn PerceptualLoss>) -> Self {
        self.perceptual = Some(hook);
        self
    }

    /// Continue counting from a restored iteration.
    pub fn resume_at(&mut self, iteration: usize) {
        self.iteration = iteration;
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn into_pipeline(self) -> Pipeline {
        self.pipeline
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn plan(&self, index: usize) -> Result<SamplePlan> {
        let s = self.pipeline.config().image_size;
        let mut rng = sample_rng(self.cfg.seed, self.iteration, index);
        let (mask, _) = generate_mask(&self.mask_spec, s, s, &mut rng)?;
        let degradation = self.preset.sample(&mut rng);
        Ok(SamplePlan { mask, degradation, rng })
    }

    fn plans(&self, n: usize) -> Result<Vec<SamplePlan>> {
        if self.workers <= 1 || n <= 1 {
            return (0..n).map(|i| self.plan(i)).collect();
        }
        let chunk = n.div_ceil(self.workers);
        let parts: Vec<Result<Vec<SamplePlan>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..n)
                .step_by(chunk)
                .map(|start| scope.spawn(move || (start..(start + chunk).min(n)).map(|i| self.plan(i)).collect()))
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        let mut out = Vec::with_capacity(n);
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Draws a batch (without replacement) and one donor per image from
    /// `data`, then runs [`Trainer::training_step`].
    pub fn step(&mut self, data: &[ImagePlane]) -> Result<LogRecord> {
        let b = self.cfg.batch_size.min(data.len());
        if data.len() < 2 {
            return Err(Error::config("training needs at least two images (splicing donors)"));
        }
        let mut rng = sample_rng(self.cfg.seed, self.iteration, BATCH_STREAM);
        let picks = sample(&mut rng, data.len(), b).into_vec();
        let donors: Vec<usize> =
            picks.iter().map(|&i| (i + 1 + rng.random_range(0..data.len() - 1)) % data.len()).collect();
        let batch: Vec<&ImagePlane> = picks.iter().map(|&i| &data[i]).collect();
        let donor: Vec<&ImagePlane> = donors.iter().map(|&i| &data[i]).collect();
        self.training_step(&batch, &donor)
    }

    /// Loss components for a batch without updating parameters.
    pub fn losses(&self, batch: &[&ImagePlane], donors: &[&ImagePlane]) -> Result<LossComponents<Tensor>> {
        if batch.len() != donors.len() || batch.is_empty() {
            return Err(Error::shape("batch and donor lists must be nonempty and equal in length"));
        }
        let plans = self.plans(batch.len())?;
        let dtype = self.pipeline.dtype();
        let org = planes_to_tensor(batch, dtype)?;
        let donor = planes_to_tensor(donors, dtype)?;
        let masks: Vec<&TamperMask> = plans.iter().map(|p| &p.mask).collect();
        let m = masks_to_tensor(&masks, dtype)?;
        self.losses_with(&org, &donor, &m, plans)
    }

    fn losses_with(
        &self,
        org: &Tensor,
        donor: &Tensor,
        m: &Tensor,
        plans: Vec<SamplePlan>,
    ) -> Result<LossComponents<Tensor>> {
        let p = &self.pipeline;
        let cfg = p.config();
        let emb = p.embed_tensor(org)?;
        let spliced = composite_tensor(donor, &emb.container, m)?;
        let attacked = if plans.iter().all(|s| s.degradation == Degradation::None) {
            spliced
        } else {
            let parts = plans
                .into_iter()
                .enumerate()
                .map(|(i, mut s)| {
                    apply_tensor(&spliced.narrow(0, i, 1)?, &s.degradation, self.preset.differentiable, &mut s.rng)
                })
                .collect::<Result<Vec<_>>>()?;
            Tensor::cat(&parts, 0)?
        };
        let rec = p.recover_tensor(&attacked)?;
        let hook = self.perceptual.as_deref();
        let lambda = self.cfg.weights.lambda;
        let zero = Tensor::zeros((), org.dtype(), org.device())?;

        let w = image_loss(&emb.container, org, hook, lambda)?;
        let mut e = loss_e_tensor(&emb.shuffled, &rec.shuffled, m)?;
        if cfg.watermark.supervise_noise {
            e = (e + mse(&rec.noise, &emb.noise.detach())?)?;
        }
        let (tv, wg) = if cfg.use_generator {
            (tv_loss_tensor(&emb.shuffled)?, mse(&rec.original, org)?)
        } else {
            (zero.clone(), zero.clone())
        };
        let ie = if cfg.use_enhancer { image_loss(&rec.enhanced, org, hook, lambda)? } else { zero };
        let tl = bce_tensor(&rec.mask, m)?;
        Ok(LossComponents { w, e, tv, wg, ie, tl })
    }

    /// Full forward pass, loss assembly and one optimizer update. On a
    /// non-finite loss the parameters are left untouched and the offending
    /// component is reported.
    pub fn training_step(&mut self, batch: &[&ImagePlane], donors: &[&ImagePlane]) -> Result<LogRecord> {
        let comps = self.losses(batch, donors)?;
        let values = comps.map(scalar)?;
        for (v, name) in values.as_array().into_iter().zip(COMPONENT_NAMES) {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { component: name });
            }
        }
        let total_t = loss_total_tensor(&comps, &self.cfg.weights)?;
        let total = scalar(&total_t)?;
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss { component: "total" });
        }
        if self.cfg.warmup > 0 {
            let ramp = ((self.iteration + 1) as f64 / self.cfg.warmup as f64).min(1.0);
            self.opt.set_learning_rate(self.cfg.learning_rate * ramp);
        }
        self.opt.backward_step(&total_t)?;
        self.iteration += 1;
        Ok(LogRecord { iteration: self.iteration, losses: values, total })
    }
}
