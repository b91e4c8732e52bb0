//! Seeded synthetic images: smooth colour gradients overlaid with a few
//! soft-edged ellipses and rectangles. Used as the bundled test corpus and as
//! desk-scale training data when no image directory is given.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::plane::{ImagePlane, CHANNELS};

/// Images with this many shapes or fewer look smooth to the spectrum tests.
pub const DEFAULT_SHAPES: usize = 4;

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

struct Shape {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    ellipse: bool,
    soft: f64,
    color: [f64; CHANNELS],
}

impl Shape {
    fn coverage(&self, y: f64, x: f64) -> f64 {
        let dy = (y - self.cy) / self.ry;
        let dx = (x - self.cx) / self.rx;
        let d = if self.ellipse { (dy * dy + dx * dx).sqrt() } else { dy.abs().max(dx.abs()) };
        1.0 - smoothstep((d - 1.0) / self.soft + 0.5)
    }
}

/// One `size x size` image drawn from `seed`.
pub fn synthetic_image(seed: u64, size: usize, shapes: usize) -> ImagePlane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let mut base = [[0.0; 3]; CHANNELS];
    for row in base.iter_mut() {
        *row = [rng.random_range(0.2..0.8), rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25)];
    }
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let wave: f64 = rng.random_range(0.0..0.08);
    let list: Vec<Shape> = (0..shapes)
        .map(|_| Shape {
            cy: rng.random_range(0.0..s),
            cx: rng.random_range(0.0..s),
            ry: rng.random_range(0.08..0.3) * s,
            rx: rng.random_range(0.08..0.3) * s,
            ellipse: rng.random_bool(0.5),
            soft: rng.random_range(0.05..0.4),
            color: [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)],
        })
        .collect();
    ImagePlane::from_fn(size, size, |c, y, x| {
        let (u, v) = (y as f64 / s, x as f64 / s);
        let [b, gy, gx] = base[c];
        let mut val = b + gy * (u - 0.5) + gx * (v - 0.5) + wave * (std::f64::consts::TAU * (u + v) + phase).sin();
        for sh in &list {
            let a = sh.coverage(y as f64 + 0.5, x as f64 + 0.5);
            val = val * (1.0 - a) + sh.color[c] * a;
        }
        val.clamp(0.0, 1.0) as f32
    })
}

/// `count` images with consecutive seeds starting at `seed`.
pub fn synthetic_corpus(seed: u64, count: usize, size: usize, shapes: usize) -> Vec<ImagePlane> {
    (0..count as u64).map(|i| synthetic_image(seed.wrapping_add(i), size, shapes)).collect()
}

/// The bundled 20-image, 64x64 smooth corpus.
pub fn bundled_smooth_corpus() -> Vec<ImagePlane> {
    synthetic_corpus(0x5eed, 20, 64, DEFAULT_SHAPES)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = synthetic_image(3, 32, 5);
        assert_eq!(a, synthetic_image(3, 32, 5));
        assert_ne!(a, synthetic_image(4, 32, 5));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn corpus_has_requested_shape() {
        let c = bundled_smooth_corpus();
        assert_eq!(c.len(), 20);
        assert!(c.iter().all(|i| i.dims() == (64, 64)));
    }
}
