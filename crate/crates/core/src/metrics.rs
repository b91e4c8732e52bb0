//! Image-quality and localization metrics.
//!
//! Conventions: images in `[0, 1]`; PSNR uses peak 1 and reports
//! [`PSNR_CAP`] for identical inputs; SSIM works on the channel-mean
//! grayscale image with an 11x11 Gaussian window (sigma 1.5) in valid mode;
//! masks are read as binary with a 0.5 threshold. Metrics that are undefined
//! for an input (empty M-PSNR mask, single-class AUC) return `None`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::plane::{ImagePlane, TamperMask, CHANNELS};

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// PSNR over all pixels, or over `mask == 1` pixels (M-PSNR) when a mask is
/// given. `Ok(None)` when the mask selects nothing.
pub fn psnr(a: &ImagePlane, b: &ImagePlane, mask: Option<&TamperMask>) -> Result<Option<f64>> {
    a.ensure_same_dims(b, "psnr")?;
    let n = a.width() * a.height();
    let (da, db) = (a.data(), b.data());
    if let Some(m) = mask {
        if m.dims() != a.dims() {
            return Err(Error::shape("psnr: mask dimensions differ from image"));
        }
    }
    // One pixel-major loop for both cases so a full mask reproduces plain PSNR
    // bit-for-bit.
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for i in 0..n {
        if mask.is_some_and(|m| m.data()[i] < 0.5) {
            continue;
        }
        for c in 0..CHANNELS {
            let d = da[c * n + i] as f64 - db[c * n + i] as f64;
            sum += d * d;
        }
        count += CHANNELS;
    }
    if count == 0 {
        return Ok(None);
    }
    Ok(Some(psnr_from_mse(sum / count as f64)))
}

pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of a row-major field.
fn filter_valid(field: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                s += kv * field[y * w + x + i];
            }
            rows[y * ow + x] = s;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                s += kv * rows[(y + i) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    (out, oh, ow)
}

/// Mean structural similarity of the grayscale images.
pub fn ssim(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    a.ensure_same_dims(b, "ssim")?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::config(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}")));
    }
    let ga = a.gray();
    let gb = b.gray();
    let k = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let aa: Vec<f64> = ga.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = gb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = ga.iter().zip(&gb).map(|(x, y)| x * y).collect();
    let (mu_a, oh, ow) = filter_valid(&ga, h, w, &k);
    let (mu_b, _, _) = filter_valid(&gb, h, w, &k);
    let (e_aa, _, _) = filter_valid(&aa, h, w, &k);
    let (e_bb, _, _) = filter_valid(&bb, h, w, &k);
    let (e_ab, _, _) = filter_valid(&ab, h, w, &k);
    let mut total = 0.0;
    for i in 0..oh * ow {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total +=
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok(total / (oh * ow) as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

pub fn confusion(pred: &TamperMask, truth: &TamperMask) -> Result<Confusion> {
    if pred.dims() != truth.dims() {
        return Err(Error::shape("confusion: mask dimensions differ"));
    }
    let mut c = Confusion::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p >= 0.5, t >= 0.5) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `|pred ∩ truth| / |pred ∪ truth|`; 1 when both masks are empty.
pub fn iou(pred: &TamperMask, truth: &TamperMask) -> Result<f64> {
    let c = confusion(pred, truth)?;
    let union = c.tp + c.fp + c.fn_;
    Ok(if union == 0 { 1.0 } else { c.tp as f64 / union as f64 })
}

/// `2TP / (2TP + FP + FN)`; 1 when both masks are empty.
pub fn f1(pred: &TamperMask, truth: &TamperMask) -> Result<f64> {
    let c = confusion(pred, truth)?;
    let denom = 2 * c.tp + c.fp + c.fn_;
    Ok(if denom == 0 { 1.0 } else { 2.0 * c.tp as f64 / denom as f64 })
}

/// Rank-based (Mann-Whitney) ROC AUC with ties counted half. `None` when the
/// truth mask holds a single class.
pub fn auc(scores: &TamperMask, truth: &TamperMask) -> Result<Option<f64>> {
    if scores.dims() != truth.dims() {
        return Err(Error::shape("auc: mask dimensions differ"));
    }
    let mut pairs: Vec<(f32, bool)> = scores.data().iter().zip(truth.data()).map(|(&s, &t)| (s, t >= 0.5)).collect();
    let n_pos = pairs.iter().filter(|p| p.1).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of (1-based, tie-averaged) ranks of the positives.
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j + 1 < pairs.len() && pairs[j + 1].0 == pairs[i].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = pairs[i..=j].iter().filter(|p| p.1).count();
        rank_sum += avg_rank * pos_in_group as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(Some(u / (n_pos as f64 * n_neg as f64)))
}

/// Metrics for one evaluated image. `None` marks an undefined value.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ImageMetrics {
    pub name: String,
    pub container_psnr: Option<f64>,
    pub container_ssim: Option<f64>,
    pub attacked_psnr: Option<f64>,
    pub recovered_psnr: Option<f64>,
    pub recovered_ssim: Option<f64>,
    pub masked_psnr: Option<f64>,
    pub iou: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
}

const COLUMNS: [&str; 10] = [
    "container_psnr",
    "container_ssim",
    "container_lpips",
    "attacked_psnr",
    "recovered_psnr",
    "recovered_ssim",
    "recovered_lpips",
    "m_psnr",
    "iou",
    "f1",
];

impl ImageMetrics {
    fn values(&self) -> [Option<f64>; 11] {
        [
            self.container_psnr,
            self.container_ssim,
            None,
            self.attacked_psnr,
            self.recovered_psnr,
            self.recovered_ssim,
            None,
            self.masked_psnr,
            self.iou,
            self.f1,
            self.auc,
        ]
    }
}

/// Per-image rows plus corpus means. LPIPS needs pretrained perceptual
/// weights and is always reported as unavailable.
#[derive(Debug, Clone, Default, Serialize)]
pub struct MetricReport {
    pub rows: Vec<ImageMetrics>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values.flatten() {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

impl MetricReport {
    pub fn push(&mut self, row: ImageMetrics) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Arithmetic mean over the images where the metric is defined.
    pub fn mean(&self, f: impl Fn(&ImageMetrics) -> Option<f64>) -> Option<f64> {
        mean_of(self.rows.iter().map(f))
    }

    pub fn means(&self) -> ImageMetrics {
        ImageMetrics {
            name: "mean".into(),
            container_psnr: self.mean(|r| r.container_psnr),
            container_ssim: self.mean(|r| r.container_ssim),
            attacked_psnr: self.mean(|r| r.attacked_psnr),
            recovered_psnr: self.mean(|r| r.recovered_psnr),
            recovered_ssim: self.mean(|r| r.recovered_ssim),
            masked_psnr: self.mean(|r| r.masked_psnr),
            iou: self.mean(|r| r.iou),
            f1: self.mean(|r| r.f1),
            auc: self.mean(|r| r.auc),
        }
    }

    fn header() -> String {
        let mut cols = vec!["image"];
        cols.extend(COLUMNS);
        cols.push("auc");
        cols.join(",")
    }

    fn csv_line(row: &ImageMetrics) -> String {
        let mut out = vec![row.name.clone()];
        for (i, v) in row.values().iter().enumerate() {
            out.push(match (i, v) {
                (2 | 6, _) => "unavailable".to_string(),
                (_, Some(x)) => format!("{x:.6}"),
                (_, None) => "missing".to_string(),
            });
        }
        out.join(",")
    }

    /// One line per image followed by a `mean` line.
    pub fn to_csv(&self) -> String {
        let mut s = Self::header();
        s.push('\n');
        for r in &self.rows {
            s.push_str(&Self::csv_line(r));
            s.push('\n');
        }
        s.push_str(&Self::csv_line(&self.means()));
        s.push('\n');
        s
    }

    /// Corpus means laid out as container / recovered / localization tables.
    pub fn to_markdown(&self) -> String {
        let m = self.means();
        let f = |v: Option<f64>| v.map_or("missing".to_string(), |x| format!("{x:.2}"));
        let f3 = |v: Option<f64>| v.map_or("missing".to_string(), |x| format!("{x:.3}"));
        format!(
            "| Container PSNR | Container SSIM | Container LPIPS | Recovered PSNR | Recovered SSIM | Recovered LPIPS | M-PSNR |\n\
             |---|---|---|---|---|---|---|\n\
             | {} | {} | unavailable | {} | {} | unavailable | {} |\n\n\
             | IoU | F1 | AUC | Attacked PSNR | Images |\n\
             |---|---|---|---|---|\n\
             | {} | {} | {} | {} | {} |\n",
            f(m.container_psnr),
            f3(m.container_ssim),
            f(m.recovered_psnr),
            f3(m.recovered_ssim),
            f(m.masked_psnr),
            f3(m.iou),
            f3(m.f1),
            f3(m.auc),
            f(m.attacked_psnr),
            self.rows.len()
        )
    }
}
