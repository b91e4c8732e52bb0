//! Frequency-domain view of images: centered FFT magnitude spectra and the
//! fraction of (non-DC) spectral energy beyond a radial cutoff.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::plane::ImagePlane;

/// Default radial cutoff as a fraction of Nyquist.
pub const DEFAULT_CUTOFF: f64 = 0.5;

/// Centered magnitude spectrum, row-major `height * width`; the DC term sits at
/// `(height / 2, width / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub width: usize,
    pub height: usize,
    pub magnitude: Vec<f64>,
}

impl Spectrum {
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.magnitude[y * self.width + x]
    }

    /// `ln(1 + |F|)`, the usual display transform.
    pub fn log_scaled(&self) -> Vec<f64> {
        self.magnitude.iter().map(|m| m.ln_1p()).collect()
    }

    /// Log spectrum normalized to its maximum, as 8-bit luma for plotting.
    pub fn to_luma8(&self) -> Vec<u8> {
        let logs = self.log_scaled();
        let max = logs.iter().cloned().fold(0.0f64, f64::max);
        if max <= 0.0 {
            return vec![0; logs.len()];
        }
        logs.iter().map(|v| (v / max * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn energy(&self) -> f64 {
        self.magnitude.iter().map(|m| m * m).sum()
    }
}

/// Unshifted 2D DFT of a row-major real field.
pub fn dft2(field: &[f64], height: usize, width: usize) -> Vec<Complex64> {
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(width);
    let col_fft = planner.plan_fft_forward(height);

    let mut buf: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for row in buf.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            col[y] = buf[y * width + x];
        }
        col_fft.process(&mut col);
        for y in 0..height {
            buf[y * width + x] = col[y];
        }
    }
    buf
}

/// Centered magnitude spectrum of the channel-mean grayscale image.
pub fn fft_magnitude_spectrum(img: &ImagePlane) -> Spectrum {
    let (w, h) = img.dims();
    let freq = dft2(&img.gray(), h, w);
    let mut magnitude = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let sy = (y + h / 2) % h;
            let sx = (x + w / 2) % w;
            magnitude[sy * w + sx] = freq[y * w + x].norm();
        }
    }
    Spectrum { width: w, height: h, magnitude }
}

/// Signed frequency of DFT bin `k` out of `n`, normalized so that Nyquist is 1.
#[inline]
fn normalized_frequency(k: usize, n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    signed / (n as f64 / 2.0)
}

/// Whether bin `(ky, kx)` lies strictly outside the centered disk of radius
/// `cutoff` (in units of Nyquist).
pub fn is_high_frequency(ky: usize, kx: usize, height: usize, width: usize, cutoff: f64) -> bool {
    let fy = normalized_frequency(ky, height);
    let fx = normalized_frequency(kx, width);
    (fy * fy + fx * fx).sqrt() > cutoff
}

/// Energy outside the disk of radius `cutoff * Nyquist` divided by total
/// energy without DC. An image whose only energy is DC reports 0.
pub fn high_frequency_ratio(img: &ImagePlane, cutoff: f64) -> Result<f64> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(Error::config(format!("cutoff {cutoff} must lie in (0, 1)")));
    }
    let (w, h) = img.dims();
    let freq = dft2(&img.gray(), h, w);
    let mut total = 0.0;
    let mut high = 0.0;
    for ky in 0..h {
        for kx in 0..w {
            if ky == 0 && kx == 0 {
                continue;
            }
            let e = freq[ky * w + kx].norm_sqr();
            total += e;
            if is_high_frequency(ky, kx, h, w, cutoff) {
                high += e;
            }
        }
    }
    // Relative guard: round-off leaves ~1e-30 of "AC" energy in flat images.
    let dc = freq[0].norm_sqr();
    if total <= 1e-20 * dc.max(1e-300) || total == 0.0 {
        return Ok(0.0);
    }
    Ok(high / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shuffle::{shuffle, ShuffleKey};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn radial_gradient(size: usize) -> ImagePlane {
        let c = (size as f32 - 1.0) / 2.0;
        let r = c * std::f32::consts::SQRT_2;
        ImagePlane::from_fn(size, size, |ch, y, x| {
            let d = ((y as f32 - c).powi(2) + (x as f32 - c).powi(2)).sqrt() / r;
            (1.0 - d) * (0.6 + 0.2 * ch as f32)
        })
    }

    #[test]
    fn constant_image_has_only_dc() {
        let s = fft_magnitude_spectrum(&ImagePlane::filled(16, 8, 0.3));
        for y in 0..8 {
            for x in 0..16 {
                let v = s.get(y, x);
                if (y, x) == (4, 8) {
                    assert!((v - 0.3 * 128.0).abs() < 1e-4);
                } else {
                    assert!(v < 1e-9, "bin ({y},{x}) = {v}");
                }
            }
        }
    }

    #[test]
    fn horizontal_cosine_peaks_at_plus_minus_k() {
        let (w, h, k) = (32usize, 16usize, 5usize);
        let img = ImagePlane::from_fn(w, h, |_, _, x| {
            (2.0 * std::f64::consts::PI * k as f64 * x as f64 / w as f64).cos() as f32
        });
        let s = fft_magnitude_spectrum(&img);
        // Analytic DFT: N/2 at (0, ±k), zero elsewhere.
        let peak = (w * h) as f64 / 2.0;
        for y in 0..h {
            for x in 0..w {
                let expected = if y == h / 2 && (x == w / 2 + k || x == w / 2 - k) { peak } else { 0.0 };
                assert!((s.get(y, x) - expected).abs() < 1e-3, "({y},{x})");
            }
        }
    }

    #[test]
    fn spectrum_energy_is_shuffle_invariant() {
        let img = radial_gradient(32);
        let shuffled = shuffle(&img, &ShuffleKey::new(9, 1)).unwrap();
        let a = fft_magnitude_spectrum(&img).energy();
        let b = fft_magnitude_spectrum(&shuffled).energy();
        assert!((a - b).abs() / a < 1e-9);
        // Parseval: sum |F|^2 = N sum x^2.
        let direct: f64 = img.gray().iter().map(|v| v * v).sum::<f64>() * 1024.0;
        assert!((a - direct).abs() / a < 1e-9);
    }

    #[test]
    fn constant_image_ratio_is_zero() {
        assert_eq!(high_frequency_ratio(&ImagePlane::filled(16, 16, 0.7), 0.5).unwrap(), 0.0);
    }

    #[test]
    fn cutoff_outside_unit_interval_is_rejected() {
        let img = ImagePlane::filled(4, 4, 0.0);
        assert!(high_frequency_ratio(&img, 0.0).is_err());
        assert!(high_frequency_ratio(&img, 1.0).is_err());
    }

    #[test]
    fn white_noise_ratio_matches_area_fraction() {
        let (n, cutoff) = (64usize, 0.5);
        // Expected value: white noise spreads energy evenly over non-DC bins.
        let mut outside = 0usize;
        for ky in 0..n {
            for kx in 0..n {
                if (ky, kx) != (0, 0) && is_high_frequency(ky, kx, n, n, cutoff) {
                    outside += 1;
                }
            }
        }
        let expected = outside as f64 / (n * n - 1) as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 30;
        let mean = (0..trials)
            .map(|_| {
                let img = ImagePlane::from_fn(n, n, |_, _, _| rng.random::<f32>());
                high_frequency_ratio(&img, cutoff).unwrap()
            })
            .sum::<f64>()
            / trials as f64;
        assert!((mean - expected).abs() < 0.01, "mean {mean} expected {expected}");
    }

    #[test]
    fn finer_shuffles_raise_high_frequency_ratio() {
        let img = radial_gradient(64);
        let base = high_frequency_ratio(&img, DEFAULT_CUTOFF).unwrap();
        let p8 = high_frequency_ratio(&shuffle(&img, &ShuffleKey::new(1, 8)).unwrap(), DEFAULT_CUTOFF).unwrap();
        let p1 = high_frequency_ratio(&shuffle(&img, &ShuffleKey::new(1, 1)).unwrap(), DEFAULT_CUTOFF).unwrap();
        assert!(p1 > p8 && p8 > base, "p1 {p1} p8 {p8} base {base}");
    }
}
