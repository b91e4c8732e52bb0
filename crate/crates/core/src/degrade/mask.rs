//! Random tamper masks: irregular brush strokes and margin-constrained boxes.
//!
//! Pixel dimensions default to the 256x256 training scale; [`MaskSpec::scaled`]
//! shrinks them for smaller images. A sampled mask is redrawn (up to
//! `max_attempts` times) until its coverage lands in the target range; if no
//! draw does, the draw closest to the range is kept.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::{ImagePlane, TamperMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    Irregular,
    Box,
    /// Irregular or box with equal probability per mask.
    Either,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IrregularSpec {
    pub strokes: (usize, usize),
    pub width: (f64, f64),
    /// Direction changes per stroke; every vertex resamples the angle.
    pub max_turns: usize,
    pub segment_length: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub count: (usize, usize),
    pub edge: (usize, usize),
    pub margin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub strategy: MaskStrategy,
    pub irregular: IrregularSpec,
    pub boxes: BoxSpec,
    pub coverage: (f64, f64),
    pub max_attempts: usize,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            strategy: MaskStrategy::Either,
            irregular: IrregularSpec {
                strokes: (1, 5),
                width: (20.0, 50.0),
                max_turns: 4,
                segment_length: (30.0, 120.0),
            },
            boxes: BoxSpec { count: (1, 3), edge: (50, 150), margin: 10 },
            coverage: (0.10, 0.50),
            max_attempts: 64,
        }
    }
}

impl MaskSpec {
    /// Scales every pixel-valued parameter by `factor` (e.g. `64 / 256`),
    /// keeping counts and coverage targets.
    pub fn scaled(&self, factor: f64) -> Self {
        let px = |v: usize| ((v as f64 * factor).round() as usize).max(1);
        let mut s = self.clone();
        s.irregular.width = (self.irregular.width.0 * factor, self.irregular.width.1 * factor);
        s.irregular.segment_length =
            (self.irregular.segment_length.0 * factor, self.irregular.segment_length.1 * factor);
        s.boxes.edge = (px(self.boxes.edge.0), px(self.boxes.edge.1));
        s.boxes.margin = px(self.boxes.margin);
        s
    }

    /// Default spec scaled from the 256-pixel reference to `size`.
    pub fn for_image_size(size: usize) -> Self {
        Self::default().scaled(size as f64 / 256.0)
    }

    pub fn validate(&self) -> Result<()> {
        let ir = &self.irregular;
        let bx = &self.boxes;
        let ordered = ir.strokes.0 <= ir.strokes.1
            && ir.width.0 <= ir.width.1
            && ir.segment_length.0 <= ir.segment_length.1
            && bx.count.0 <= bx.count.1
            && bx.edge.0 <= bx.edge.1
            && self.coverage.0 <= self.coverage.1;
        if !ordered {
            return Err(Error::config("mask spec ranges must be ordered (lo <= hi)"));
        }
        if ir.strokes.0 == 0 || bx.count.0 == 0 || bx.edge.0 == 0 || ir.width.0 <= 0.0 {
            return Err(Error::config("mask spec counts and sizes must be positive"));
        }
        if !(0.0..=1.0).contains(&self.coverage.0) || !(0.0..=1.0).contains(&self.coverage.1) {
            return Err(Error::config("mask coverage must lie in [0, 1]"));
        }
        if self.max_attempts == 0 {
            return Err(Error::config("mask max_attempts must be positive"));
        }
        Ok(())
    }

    /// Smallest image edge that can host the largest box with its margins.
    pub fn min_box_extent(&self) -> usize {
        self.boxes.edge.1 + 2 * self.boxes.margin
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stroke {
    pub vertices: Vec<(f64, f64)>,
    pub width: f64,
}

/// What the generator drew, for audits and logging.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskShapes {
    Strokes(Vec<Stroke>),
    Boxes(Vec<Rect>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskReport {
    pub shapes: MaskShapes,
    pub coverage: f64,
    pub attempts: usize,
}

fn uniform_usize<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

fn uniform_f64<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn draw_boxes<R: Rng + ?Sized>(spec: &BoxSpec, h: usize, w: usize, rng: &mut R) -> (TamperMask, Vec<Rect>) {
    let mut m = TamperMask::zeros(w, h);
    let n = uniform_usize(rng, spec.count);
    let mut rects = Vec::with_capacity(n);
    for _ in 0..n {
        let bw = uniform_usize(rng, spec.edge);
        let bh = uniform_usize(rng, spec.edge);
        let x = rng.random_range(spec.margin..=w - spec.margin - bw);
        let y = rng.random_range(spec.margin..=h - spec.margin - bh);
        for yy in y..y + bh {
            for xx in x..x + bw {
                m.set(yy, xx, 1.0);
            }
        }
        rects.push(Rect { x, y, width: bw, height: bh });
    }
    (m, rects)
}

fn stamp_segment(m: &mut TamperMask, a: (f64, f64), b: (f64, f64), radius: f64) {
    let (w, h) = m.dims();
    let x0 = (a.0.min(b.0) - radius).floor().max(0.0) as usize;
    let x1 = ((a.0.max(b.0) + radius).ceil() as usize).min(w);
    let y0 = (a.1.min(b.1) - radius).floor().max(0.0) as usize;
    let y1 = ((a.1.max(b.1) + radius).ceil() as usize).min(h);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = if len2 > 0.0 { (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
            if (px - cx).powi(2) + (py - cy).powi(2) <= radius * radius {
                m.set(y, x, 1.0);
            }
        }
    }
}

fn draw_strokes<R: Rng + ?Sized>(spec: &IrregularSpec, h: usize, w: usize, rng: &mut R) -> (TamperMask, Vec<Stroke>) {
    let mut m = TamperMask::zeros(w, h);
    let n = uniform_usize(rng, spec.strokes);
    let mut strokes = Vec::with_capacity(n);
    for _ in 0..n {
        let width = uniform_f64(rng, spec.width);
        let turns = rng.random_range(0..=spec.max_turns);
        let mut p = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
        let mut vertices = vec![p];
        for _ in 0..=turns {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let len = uniform_f64(rng, spec.segment_length);
            let q = ((p.0 + len * angle.cos()).clamp(0.0, w as f64), (p.1 + len * angle.sin()).clamp(0.0, h as f64));
            stamp_segment(&mut m, p, q, width / 2.0);
            vertices.push(q);
            p = q;
        }
        strokes.push(Stroke { vertices, width });
    }
    (m, strokes)
}

/// Distance from `v` to the closed interval.
fn range_distance(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if v < lo {
        lo - v
    } else if v > hi {
        v - hi
    } else {
        0.0
    }
}

/// Draws a binary tamper mask. Deterministic for a given rng state.
pub fn generate_mask<R: Rng + ?Sized>(
    spec: &MaskSpec,
    height: usize,
    width: usize,
    rng: &mut R,
) -> Result<(TamperMask, MaskReport)> {
    spec.validate()?;
    if spec.strategy != MaskStrategy::Irregular {
        let need = spec.min_box_extent();
        if height < need || width < need {
            return Err(Error::config(format!(
                "box masks need images of at least {need}x{need}, got {width}x{height}"
            )));
        }
    }
    let mut best: Option<(f64, TamperMask, MaskReport)> = None;
    for attempt in 1..=spec.max_attempts {
        let strategy = match spec.strategy {
            MaskStrategy::Either => {
                if rng.random_bool(0.5) {
                    MaskStrategy::Irregular
                } else {
                    MaskStrategy::Box
                }
            }
            s => s,
        };
        let (mask, shapes) = match strategy {
            MaskStrategy::Box => {
                let (m, r) = draw_boxes(&spec.boxes, height, width, rng);
                (m, MaskShapes::Boxes(r))
            }
            _ => {
                let (m, s) = draw_strokes(&spec.irregular, height, width, rng);
                (m, MaskShapes::Strokes(s))
            }
        };
        let coverage = mask.coverage();
        let dist = range_distance(coverage, spec.coverage);
        let report = MaskReport { shapes, coverage, attempts: attempt };
        if dist == 0.0 {
            return Ok((mask, report));
        }
        if best.as_ref().is_none_or(|(d, _, _)| dist < *d) {
            best = Some((dist, mask, report));
        }
    }
    let (_, mask, report) = best.expect("max_attempts >= 1");
    Ok((mask, report))
}

/// Region replacement: `mask * donor + (1 - mask) * img`, bit-exact for a
/// binary mask.
pub fn splice(img: &ImagePlane, donor: &ImagePlane, mask: &TamperMask) -> Result<ImagePlane> {
    if !mask.is_binary() {
        return Err(Error::config("splice expects a binary mask"));
    }
    crate::plane::blend(donor, img, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn box_masks_respect_geometry() {
        let spec = MaskSpec { strategy: MaskStrategy::Box, ..MaskSpec::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (m, rep) = generate_mask(&spec, 256, 256, &mut rng).unwrap();
            assert!(m.is_binary());
            let MaskShapes::Boxes(rects) = rep.shapes else { panic!("expected boxes") };
            assert!((1..=3).contains(&rects.len()));
            for r in rects {
                assert!((50..=150).contains(&r.width) && (50..=150).contains(&r.height));
                assert!(r.x >= 10 && r.y >= 10);
                assert!(r.x + r.width <= 246 && r.y + r.height <= 246);
            }
        }
    }

    #[test]
    fn irregular_masks_have_one_to_five_strokes() {
        let spec = MaskSpec { strategy: MaskStrategy::Irregular, ..MaskSpec::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut in_range = 0;
        for _ in 0..300 {
            let (m, rep) = generate_mask(&spec, 256, 256, &mut rng).unwrap();
            assert!(m.is_binary());
            let MaskShapes::Strokes(strokes) = rep.shapes else { panic!("expected strokes") };
            assert!((1..=5).contains(&strokes.len()));
            for s in &strokes {
                assert!((20.0..=50.0).contains(&s.width));
                assert!((2..=6).contains(&s.vertices.len()));
            }
            if (0.1..=0.5).contains(&rep.coverage) {
                in_range += 1;
            }
        }
        assert!(in_range > 270, "coverage target met only {in_range}/300 times");
    }

    #[test]
    fn same_seed_same_mask() {
        let spec = MaskSpec::default();
        let a = generate_mask(&spec, 256, 256, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = generate_mask(&spec, 256, 256, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_small_for_boxes_is_a_config_error() {
        let spec = MaskSpec::default();
        assert!(generate_mask(&spec, 128, 256, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let scaled = MaskSpec::for_image_size(64);
        assert!(generate_mask(&scaled, 64, 64, &mut ChaCha8Rng::seed_from_u64(0)).is_ok());
    }

    #[test]
    fn scaled_spec_meets_coverage_on_small_images() {
        let spec = MaskSpec::for_image_size(64);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ok = (0..200)
            .filter(|_| {
                let (_, rep) = generate_mask(&spec, 64, 64, &mut rng).unwrap();
                (0.1..=0.5).contains(&rep.coverage)
            })
            .count();
        assert!(ok > 190, "{ok}/200");
    }

    #[test]
    fn splice_partitions_pixels_between_sources() {
        let img = ImagePlane::from_fn(16, 16, |c, y, x| (c * 256 + y * 16 + x) as f32 / 1000.0);
        let donor = ImagePlane::from_fn(16, 16, |c, y, x| 1.0 - (c * 256 + y * 16 + x) as f32 / 1000.0);
        let (m, _) = generate_mask(&MaskSpec::for_image_size(16), 16, 16, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let out = splice(&img, &donor, &m).unwrap();
        for c in 0..3 {
            for y in 0..16 {
                for x in 0..16 {
                    let expect = if m.get(y, x) == 1.0 { donor.get(c, y, x) } else { img.get(c, y, x) };
                    assert_eq!(out.get(c, y, x).to_bits(), expect.to_bits());
                }
            }
        }
        assert_eq!(splice(&img, &donor, &TamperMask::zeros(16, 16)).unwrap(), img);
        assert_eq!(splice(&img, &donor, &TamperMask::filled(16, 16, 1.0)).unwrap(), donor);
        assert!(splice(&img, &donor, &TamperMask::filled(16, 16, 0.5)).is_err());
    }
}
