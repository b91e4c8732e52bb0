//! Single-level orthonormal 2D Haar transform.
//!
//! For each colour channel `c`, subband channels `4c..4c+4` hold
//! `[LL, LH, HL, HH]` of the 2x2 blocks `[[a, b], [c, d]]`:
//!
//! ```text
//! LL = (a + b + c + d) / 2     LH = (a + b - c - d) / 2
//! HL = (a - b + c - d) / 2     HH = (a - b - c + d) / 2
//! ```
//!
//! The 4x4 matrix is symmetric and orthogonal, so it is its own inverse.

use crate::error::{Error, Result};
use crate::plane::{ImagePlane, CHANNELS};

pub const SUBBANDS: usize = 4 * CHANNELS;

/// `12 x (H/2) x (W/2)` Haar coefficients, channel-planar.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandTensor {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl SubbandTensor {
    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != SUBBANDS * width * height {
            return Err(Error::shape(format!(
                "expected {} subband samples for {width}x{height}, got {}",
                SUBBANDS * width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Subband-grid width, half the image width.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, k: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn get(&self, k: usize, y: usize, x: usize) -> f32 {
        self.data[(k * self.height + y) * self.width + x]
    }
}

#[inline]
fn haar4(a: f32, b: f32, c: f32, d: f32) -> [f32; 4] {
    let (s0, s1, d0, d1) = (a + b, c + d, a - b, c - d);
    [(s0 + s1) * 0.5, (s0 - s1) * 0.5, (d0 + d1) * 0.5, (d0 - d1) * 0.5]
}

pub fn dwt_haar(img: &ImagePlane) -> Result<SubbandTensor> {
    let (w, h) = img.dims();
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::shape(format!("Haar transform needs even dimensions, got {w}x{h}")));
    }
    let (hw, hh) = (w / 2, h / 2);
    let n = hw * hh;
    let mut data = vec![0.0f32; SUBBANDS * n];
    for c in 0..CHANNELS {
        for y in 0..hh {
            for x in 0..hw {
                let s = haar4(
                    img.get(c, 2 * y, 2 * x),
                    img.get(c, 2 * y, 2 * x + 1),
                    img.get(c, 2 * y + 1, 2 * x),
                    img.get(c, 2 * y + 1, 2 * x + 1),
                );
                for (k, v) in s.into_iter().enumerate() {
                    data[(4 * c + k) * n + y * hw + x] = v;
                }
            }
        }
    }
    Ok(SubbandTensor { width: hw, height: hh, data })
}

pub fn iwt_haar(sb: &SubbandTensor) -> ImagePlane {
    let (hw, hh) = (sb.width, sb.height);
    let mut img = ImagePlane::new(2 * hw, 2 * hh);
    for c in 0..CHANNELS {
        for y in 0..hh {
            for x in 0..hw {
                let [a, b, cc, d] = haar4(
                    sb.get(4 * c, y, x),
                    sb.get(4 * c + 1, y, x),
                    sb.get(4 * c + 2, y, x),
                    sb.get(4 * c + 3, y, x),
                );
                img.set(c, 2 * y, 2 * x, a);
                img.set(c, 2 * y, 2 * x + 1, b);
                img.set(c, 2 * y + 1, 2 * x, cc);
                img.set(c, 2 * y + 1, 2 * x + 1, d);
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_image_concentrates_in_ll() {
        let sb = dwt_haar(&ImagePlane::filled(6, 4, 1.0)).unwrap();
        for k in 0..SUBBANDS {
            let want = if k % 4 == 0 { 2.0 } else { 0.0 };
            assert!(sb.channel(k).iter().all(|&v| v == want));
        }
    }

    #[test]
    fn two_by_two_block_matches_hand_oracle() {
        let (a, b, c, d) = (0.9f32, 0.2, 0.4, 0.7);
        let img = ImagePlane::from_fn(2, 2, |ch, y, x| if ch == 0 { [[a, b], [c, d]][y][x] } else { 0.0 });
        let sb = dwt_haar(&img).unwrap();
        let want = [(a + b + c + d) / 2.0, (a + b - c - d) / 2.0, (a - b + c - d) / 2.0, (a - b - c + d) / 2.0];
        for (k, w) in want.into_iter().enumerate() {
            assert!((sb.get(k, 0, 0) - w).abs() < 1e-7);
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = ImagePlane::from_fn(64, 64, |_, _, _| rng.random::<f32>());
        let sb = dwt_haar(&img).unwrap();
        let back = iwt_haar(&sb);
        let err = img.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(err < 1e-6, "{err}");
        let e1: f64 = img.data().iter().map(|v| (*v as f64).powi(2)).sum();
        let e2: f64 = sb.data().iter().map(|v| (*v as f64).powi(2)).sum();
        assert!((e1 - e2).abs() / e1 < 1e-6);
    }

    #[test]
    fn odd_dimensions_are_rejected() {
        assert!(dwt_haar(&ImagePlane::new(5, 4)).is_err());
        assert!(dwt_haar(&ImagePlane::new(4, 3)).is_err());
    }
}
