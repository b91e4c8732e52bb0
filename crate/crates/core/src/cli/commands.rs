use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::Serialize;

use crate::config::RunConfig;
use crate::corpus::{bundled_smooth_corpus, synthetic_corpus};
use crate::degrade::{DegradationPreset, MaskSpec};
use crate::error::Error;
use crate::metrics::{psnr, MetricReport};
use crate::plane::ImagePlane;
use crate::shuffle::{shuffle, ShuffleKey};
use crate::spectrum::{fft_magnitude_spectrum, high_frequency_ratio};
use crate::train::{
    evaluate as evaluate_corpus, load_checkpoint, save_checkpoint, score, AttackKind, Pipeline, PipelineCheckpoint,
    Trainer,
};

use super::images::{
    input_images, list_images, load_mask, load_plane, prepare_dir, save_luma, save_mask, save_plane, stem, write_text,
};
use super::CliError;

/// Resolved configuration written into every output directory.
pub const CONFIG_ECHO: &str = "run.toml";
pub const TRAIN_LOG: &str = "train_log.jsonl";

fn echo(cfg: &RunConfig) -> Result<(), CliError> {
    prepare_dir(&cfg.io.out_dir)?;
    write_text(&cfg.io.out_dir.join(CONFIG_ECHO), &cfg.to_toml())
}

fn unwritable(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Unwritable(format!("{}: {e}", path.display()))
}

fn load_images(
    dir: &Path,
    list: Option<&Path>,
    size: usize,
    resize: bool,
) -> Result<Vec<(String, ImagePlane)>, CliError> {
    list_images(dir, list)?.iter().map(|p| Ok((stem(p), load_plane(p, size, resize)?))).collect()
}

fn named(prefix: &str, imgs: Vec<ImagePlane>) -> Vec<(String, ImagePlane)> {
    imgs.into_iter().enumerate().map(|(i, m)| (format!("{prefix}_{i:03}"), m)).collect()
}

fn training_images(cfg: &RunConfig) -> Result<Vec<ImagePlane>, CliError> {
    let d = &cfg.data;
    Ok(match &d.train_dir {
        Some(dir) => load_images(dir, d.train_list.as_deref(), cfg.model.image_size, d.resize)?
            .into_iter()
            .map(|(_, m)| m)
            .collect(),
        None => synthetic_corpus(d.synthetic_seed, d.synthetic_train, cfg.model.image_size, d.synthetic_shapes),
    })
}

/// Held-out originals; synthetic ones continue the training seeds.
fn eval_images(cfg: &RunConfig) -> Result<Vec<(String, ImagePlane)>, CliError> {
    let d = &cfg.data;
    match &d.eval_dir {
        Some(dir) => load_images(dir, d.eval_list.as_deref(), cfg.model.image_size, d.resize),
        None => {
            let seed = d.synthetic_seed.wrapping_add(d.synthetic_train as u64);
            Ok(named("synthetic", synthetic_corpus(seed, d.synthetic_eval, cfg.model.image_size, d.synthetic_shapes)))
        }
    }
}

/// Loads the configured checkpoint and adopts its model and training
/// settings into `cfg`.
fn load_pipeline(cfg: &mut RunConfig) -> Result<Pipeline, CliError> {
    let path = cfg.io.checkpoint_path();
    if !path.is_file() {
        return Err(CliError::MissingData(format!("checkpoint {} not found", path.display())));
    }
    let ckpt = load_checkpoint(&path).map_err(|e| CliError::MissingData(format!("{}: {e}", path.display())))?;
    cfg.model = ckpt.model.clone();
    cfg.train = ckpt.train.clone();
    Ok(ckpt.to_pipeline()?)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub iterations: usize,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Trains, logging one JSON line per step. On a non-finite loss the
/// parameters from before the failing step are saved to `halted.safetensors`
/// and the run stops with [`CliError::Halted`].
pub fn train(cfg: &RunConfig, resume: Option<&Path>, workers: usize) -> Result<TrainSummary, CliError> {
    let mut cfg = cfg.clone();
    let data = training_images(&cfg)?;
    if data.len() < 2 {
        return Err(CliError::MissingData("training needs at least two images".into()));
    }
    let (pipeline, start) = match resume {
        Some(p) => {
            let ckpt = load_checkpoint(p).map_err(|e| CliError::MissingData(format!("{}: {e}", p.display())))?;
            cfg.model = ckpt.model.clone();
            (ckpt.to_pipeline()?, ckpt.iteration)
        }
        None => (Pipeline::new(&cfg.model, cfg.train.seed, DType::F32)?, 0),
    };
    echo(&cfg)?;
    let out = cfg.io.out_dir.clone();
    let ckpt_path = cfg.io.checkpoint_path();
    let log_path = out.join(TRAIN_LOG);
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| unwritable(&log_path, e))?);
    let mut trainer = Trainer::new(pipeline, cfg.train.clone(), cfg.train_preset()?)?.with_workers(workers);
    trainer.resume_at(start);
    let save = |t: &Trainer, path: &Path| -> Result<(), CliError> {
        let ckpt = PipelineCheckpoint::capture(t.pipeline(), t.config(), t.iteration());
        save_checkpoint(path, &ckpt).map_err(|e| unwritable(path, e))
    };
    while trainer.iteration() < cfg.train.iterations {
        let rec = match trainer.step(&data) {
            Ok(r) => r,
            Err(Error::NonFiniteLoss { component }) => {
                log.flush().map_err(|e| unwritable(&log_path, e))?;
                let halted = out.join("halted.safetensors");
                save(&trainer, &halted)?;
                return Err(CliError::Halted(format!(
                    "loss component `{component}` is not finite at iteration {}; pre-step state saved to {}",
                    trainer.iteration() + 1,
                    halted.display()
                )));
            }
            Err(e) => return Err(e.into()),
        };
        writeln!(log, "{}", rec.to_line()).map_err(|e| unwritable(&log_path, e))?;
        if rec.iteration % 50 == 0 || rec.iteration == 1 {
            log::info!("iteration {} total {:.5}", rec.iteration, rec.total);
        }
        let every = cfg.train.checkpoint_every;
        if every > 0 && rec.iteration % every == 0 && rec.iteration < cfg.train.iterations {
            save(&trainer, &out.join(format!("checkpoint_{:06}.safetensors", rec.iteration)))?;
        }
    }
    log.flush().map_err(|e| unwritable(&log_path, e))?;
    if let Some(parent) = ckpt_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_dir(parent)?;
    }
    save(&trainer, &ckpt_path)?;
    Ok(TrainSummary { iterations: trainer.iteration(), checkpoint: ckpt_path, log: log_path })
}

/// Writes `<stem>.png` containers and reports PSNR against each input.
pub fn embed(cfg: &RunConfig, input: &Path) -> Result<Vec<(String, Option<f64>)>, CliError> {
    let mut cfg = cfg.clone();
    let p = load_pipeline(&mut cfg)?;
    let files = input_images(input)?;
    echo(&cfg)?;
    let mut out = Vec::with_capacity(files.len());
    for f in &files {
        let name = stem(f);
        let org = load_plane(f, cfg.model.image_size, cfg.data.resize)?;
        let container = p.embed(&org)?.quantized();
        save_plane(&cfg.io.out_dir.join(format!("{name}.png")), &container)?;
        let db = psnr(&container, &org, None)?;
        println!("{name}\t{}", db.map_or("missing".into(), |v| format!("{v:.2} dB")));
        out.push((name, db));
    }
    Ok(out)
}

/// Names of the extra files written per image by `--emit-intermediates`.
pub const INTERMEDIATES: [&str; 4] = ["shuffled_secret", "secret", "original", "enhanced"];

/// Writes `<stem>_recovered.png` and `<stem>_mask.png` (plus intermediates)
/// and returns every written path.
pub fn recover(cfg: &RunConfig, input: &Path, intermediates: bool) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = cfg.clone();
    let p = load_pipeline(&mut cfg)?;
    let files = input_images(input)?;
    echo(&cfg)?;
    let dir = cfg.io.out_dir.clone();
    let mut written = Vec::new();
    for f in &files {
        let name = stem(f);
        let att = load_plane(f, cfg.model.image_size, cfg.data.resize)?;
        let r = p.recover(&att)?;
        let mut put = |suffix: &str, img: &ImagePlane| -> Result<(), CliError> {
            let path = dir.join(format!("{name}_{suffix}.png"));
            save_plane(&path, &img.clipped())?;
            written.push(path);
            Ok(())
        };
        put("recovered", &r.recovered)?;
        if intermediates {
            for (suffix, img) in INTERMEDIATES.iter().zip([&r.shuffled_secret, &r.secret, &r.original, &r.enhanced]) {
                put(suffix, img)?;
            }
        }
        let mask_path = dir.join(format!("{name}_mask.png"));
        save_mask(&mask_path, &r.mask)?;
        written.push(mask_path);
        println!("{name}\ttampered {:.2}%", 100.0 * r.mask.coverage());
    }
    Ok(written)
}

/// The attack actually applied during evaluation.
#[derive(Debug, Serialize)]
struct AttackEcho<'a> {
    attack: AttackKind,
    seed: u64,
    degradation: &'a str,
    mask: Option<MaskSpec>,
    preset: &'a DegradationPreset,
}

/// Attacks, recovers and scores held-out images; writes `metrics.csv`,
/// `metrics.md` and `attack.toml`.
///
/// With `attacked` set, each attacked image is paired by stem with an
/// original and a ground-truth mask instead of being attacked here.
pub fn evaluate(cfg: &RunConfig, attacked: Option<&Path>, masks: Option<&Path>) -> Result<MetricReport, CliError> {
    let mut cfg = cfg.clone();
    let p = load_pipeline(&mut cfg)?;
    let size = cfg.model.image_size;
    let originals = eval_images(&cfg)?;
    let preset = cfg.eval_preset()?;
    let report = match attacked {
        None => {
            if cfg.eval.attack == AttackKind::Splice && originals.len() < 2 {
                return Err(CliError::MissingPairs("splicing needs at least two originals (donors)".into()));
            }
            evaluate_corpus(&p, &originals, &cfg.eval, &preset)?
        }
        Some(dir) => {
            let masks = masks.ok_or_else(|| CliError::MissingPairs("--attacked needs --masks".into()))?;
            let by_name: BTreeMap<&str, &ImagePlane> = originals.iter().map(|(n, m)| (n.as_str(), m)).collect();
            let mut report = MetricReport::default();
            for f in input_images(dir)? {
                let name = stem(&f);
                let org = by_name
                    .get(name.as_str())
                    .ok_or_else(|| CliError::MissingPairs(format!("no original named `{name}`")))?;
                let mask_path = masks.join(format!("{name}.png"));
                if !mask_path.is_file() {
                    return Err(CliError::MissingPairs(format!("no mask {}", mask_path.display())));
                }
                let truth = load_mask(&mask_path, size)?;
                let att = load_plane(&f, size, cfg.data.resize)?;
                let container = p.embed(org)?.quantized();
                report.push(score(&p, &name, org, container, att, truth)?.metrics);
            }
            report
        }
    };
    echo(&cfg)?;
    let dir = &cfg.io.out_dir;
    write_text(&dir.join("metrics.csv"), &report.to_csv())?;
    write_text(&dir.join("metrics.md"), &report.to_markdown())?;
    let attack = match attacked {
        None => AttackEcho {
            attack: cfg.eval.attack,
            seed: cfg.eval.seed,
            degradation: &cfg.eval.degradation,
            mask: (cfg.eval.attack == AttackKind::Splice)
                .then(|| cfg.eval.mask.clone().unwrap_or_else(|| MaskSpec::for_image_size(size))),
            preset: &preset,
        },
        Some(_) => AttackEcho {
            attack: AttackKind::None,
            seed: cfg.eval.seed,
            degradation: "external",
            mask: None,
            preset: &DegradationPreset { differentiable: false, menu: vec![] },
        },
    };
    let text = toml::to_string_pretty(&attack).map_err(|e| CliError::Failed(Error::Config(e.to_string())))?;
    write_text(&dir.join("attack.toml"), &text)?;
    print!("{}", report.to_markdown());
    Ok(report)
}

/// Per-image high-frequency ratios, one column per patch size.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioTable {
    pub patches: Vec<usize>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl RatioTable {
    pub fn means(&self) -> Vec<f64> {
        let n = self.rows.len().max(1) as f64;
        (0..self.patches.len()).map(|j| self.rows.iter().map(|r| r.1[j]).sum::<f64>() / n).collect()
    }

    fn to_csv(&self, header: &str) -> String {
        let mut s = String::from(header);
        s.push_str("image");
        for p in &self.patches {
            s.push_str(&format!(",patch_{p}"));
        }
        s.push('\n');
        let mut line = |name: &str, vals: &[f64]| {
            s.push_str(name);
            for v in vals {
                s.push_str(&format!(",{v:.6}"));
            }
            s.push('\n');
        };
        for (name, vals) in &self.rows {
            line(name, vals);
        }
        line("mean", &self.means());
        s
    }
}

/// Writes `<stem>_p<patch>.png` log-magnitude spectra for every image and
/// patch size plus `ratios.csv`. The table's leading `#` lines record the
/// settings, so the directory holds exactly one file per spectrum and one
/// table.
pub fn analyze_spectrum(
    input: Option<&Path>,
    patches: &[usize],
    cutoff: f64,
    seed: u64,
    out: &Path,
) -> Result<RatioTable, CliError> {
    if patches.is_empty() {
        return Err(CliError::InvalidConfig("no patch sizes given".into()));
    }
    let images: Vec<(String, ImagePlane)> = match input {
        Some(path) => input_images(path)?
            .iter()
            .map(|f| {
                let img = image::open(f).map_err(|e| CliError::MissingData(format!("{}: {e}", f.display())))?.to_rgb8();
                let (w, h) = img.dimensions();
                Ok((stem(f), ImagePlane::from_rgb8(w as usize, h as usize, img.as_raw())?))
            })
            .collect::<Result<_, CliError>>()?,
        None => named("smooth", bundled_smooth_corpus()),
    };
    prepare_dir(out)?;
    let mut rows = Vec::with_capacity(images.len());
    for (name, img) in &images {
        let mut vals = Vec::with_capacity(patches.len());
        for &patch in patches {
            let shuffled = shuffle(img, &ShuffleKey::new(seed, patch))?;
            let spec = fft_magnitude_spectrum(&shuffled);
            save_luma(&out.join(format!("{name}_p{patch}.png")), spec.width, spec.height, spec.to_luma8())?;
            vals.push(high_frequency_ratio(&shuffled, cutoff)?);
        }
        rows.push((name.clone(), vals));
    }
    let table = RatioTable { patches: patches.to_vec(), rows };
    let source = input.map_or("bundled smooth corpus".to_string(), |p| p.display().to_string());
    let list: Vec<String> = patches.iter().map(|p| p.to_string()).collect();
    let header = format!(
        "# analyze-spectrum input = {source}\n# patches = {}\n# seed = {seed}\n# cutoff = {cutoff}\n",
        list.join(",")
    );
    write_text(&out.join("ratios.csv"), &table.to_csv(&header))?;
    for (p, m) in patches.iter().zip(table.means()) {
        println!("patch {p:>3}\tmean high-frequency ratio {m:.4}");
    }
    Ok(table)
}
