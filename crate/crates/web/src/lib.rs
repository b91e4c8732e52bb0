//! WebAssembly bindings for a static demo page: synthetic images, keyed
//! pixel shuffling with magnitude spectra and high-frequency ratios, and
//! random tamper masks with a splice preview. Pixel buffers cross the
//! boundary as interleaved RGBA bytes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shufflemark::degrade::{generate_mask, splice, MaskShapes, MaskSpec, MaskStrategy};
use shufflemark::shuffle::shuffle;
use shufflemark::spectrum::{fft_magnitude_spectrum, high_frequency_ratio, DEFAULT_CUTOFF};
use shufflemark::{corpus, ImagePlane, ShuffleKey, TamperMask};
use wasm_bindgen::prelude::*;

fn to_rgba(img: &ImagePlane) -> Vec<u8> {
    img.to_rgb8().chunks(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect()
}

fn luma_to_rgba(luma: &[u8]) -> Vec<u8> {
    luma.iter().flat_map(|&v| [v, v, v, 255]).collect()
}

fn from_rgba(rgba: &[u8], width: usize, height: usize) -> Result<ImagePlane, String> {
    if rgba.len() != 4 * width * height {
        return Err(format!("expected {} RGBA bytes for {width}x{height}, got {}", 4 * width * height, rgba.len()));
    }
    let rgb: Vec<u8> = rgba.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
    ImagePlane::from_rgb8(width, height, &rgb).map_err(|e| e.to_string())
}

/// A smooth synthetic `size x size` image as RGBA.
#[wasm_bindgen]
pub fn synthetic(seed: u32, size: usize, shapes: usize) -> Vec<u8> {
    to_rgba(&corpus::synthetic_image(seed as u64, size, shapes))
}

#[wasm_bindgen]
pub struct ShuffleView {
    shuffled: Vec<u8>,
    spectrum: Vec<u8>,
    shuffled_spectrum: Vec<u8>,
    ratio: f64,
    shuffled_ratio: f64,
}

#[wasm_bindgen]
impl ShuffleView {
    #[wasm_bindgen(getter)]
    pub fn shuffled(&self) -> Vec<u8> {
        self.shuffled.clone()
    }

    /// Log magnitude spectrum of the input, DC centered.
    #[wasm_bindgen(getter)]
    pub fn spectrum(&self) -> Vec<u8> {
        self.spectrum.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn shuffled_spectrum(&self) -> Vec<u8> {
        self.shuffled_spectrum.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    #[wasm_bindgen(getter)]
    pub fn shuffled_ratio(&self) -> f64 {
        self.shuffled_ratio
    }
}

pub fn shuffle_view_impl(
    rgba: &[u8],
    width: usize,
    height: usize,
    seed: u32,
    patch: usize,
) -> Result<ShuffleView, String> {
    let img = from_rgba(rgba, width, height)?;
    let shuffled = shuffle(&img, &ShuffleKey::new(seed as u64, patch)).map_err(|e| e.to_string())?;
    let ratio = |x: &ImagePlane| high_frequency_ratio(x, DEFAULT_CUTOFF).map_err(|e| e.to_string());
    Ok(ShuffleView {
        shuffled: to_rgba(&shuffled),
        spectrum: luma_to_rgba(&fft_magnitude_spectrum(&img).to_luma8()),
        shuffled_spectrum: luma_to_rgba(&fft_magnitude_spectrum(&shuffled).to_luma8()),
        ratio: ratio(&img)?,
        shuffled_ratio: ratio(&shuffled)?,
    })
}

/// Shuffles `rgba` with the keyed permutation over `patch`-sized cells.
#[wasm_bindgen]
pub fn shuffle_view(rgba: &[u8], width: usize, height: usize, seed: u32, patch: usize) -> Result<ShuffleView, JsError> {
    shuffle_view_impl(rgba, width, height, seed, patch).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub struct SplicePreview {
    mask: Vec<u8>,
    spliced: Vec<u8>,
    coverage: f64,
    shapes: String,
}

#[wasm_bindgen]
impl SplicePreview {
    /// White where tampered.
    #[wasm_bindgen(getter)]
    pub fn mask(&self) -> Vec<u8> {
        self.mask.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn spliced(&self) -> Vec<u8> {
        self.spliced.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    /// `"strokes"` or `"boxes"` with their count.
    #[wasm_bindgen(getter)]
    pub fn shapes(&self) -> String {
        self.shapes.clone()
    }
}

fn parse_strategy(name: &str) -> Result<MaskStrategy, String> {
    match name {
        "irregular" => Ok(MaskStrategy::Irregular),
        "box" => Ok(MaskStrategy::Box),
        "either" => Ok(MaskStrategy::Either),
        other => Err(format!("unknown mask strategy {other:?}")),
    }
}

pub fn splice_preview_impl(
    rgba: &[u8],
    donor: &[u8],
    size: usize,
    seed: u32,
    strategy: &str,
) -> Result<SplicePreview, String> {
    let img = from_rgba(rgba, size, size)?;
    let donor = from_rgba(donor, size, size)?;
    let spec = MaskSpec { strategy: parse_strategy(strategy)?, ..MaskSpec::for_image_size(size) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let (mask, report): (TamperMask, _) = generate_mask(&spec, size, size, &mut rng).map_err(|e| e.to_string())?;
    let spliced = splice(&img, &donor, &mask).map_err(|e| e.to_string())?;
    let shapes = match &report.shapes {
        MaskShapes::Strokes(s) => format!("{} strokes", s.len()),
        MaskShapes::Boxes(b) => format!("{} boxes", b.len()),
    };
    Ok(SplicePreview {
        mask: luma_to_rgba(&mask.to_luma8()),
        spliced: to_rgba(&spliced),
        coverage: report.coverage,
        shapes,
    })
}

/// Draws a tamper mask at the default spec scaled to `size` and pastes
/// `donor` into `rgba` under it.
#[wasm_bindgen]
pub fn splice_preview(
    rgba: &[u8],
    donor: &[u8],
    size: usize,
    seed: u32,
    strategy: &str,
) -> Result<SplicePreview, JsError> {
    splice_preview_impl(rgba, donor, size, seed, strategy).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgba_round_trip() {
        let px = synthetic(3, 16, 4);
        assert_eq!(px.len(), 16 * 16 * 4);
        assert_eq!(to_rgba(&from_rgba(&px, 16, 16).unwrap()), px);
    }

    #[test]
    fn shuffling_raises_the_high_frequency_ratio() {
        let px = synthetic(1, 64, 4);
        let v = shuffle_view_impl(&px, 64, 64, 7, 1).unwrap();
        assert!(v.shuffled_ratio > v.ratio);
        assert_eq!(v.shuffled.len(), px.len());
        assert_eq!(v.spectrum.len(), px.len());
        let whole = shuffle_view_impl(&px, 64, 64, 7, 64).unwrap();
        assert_eq!(whole.shuffled, px);
    }

    #[test]
    fn bad_inputs_are_errors() {
        assert!(shuffle_view_impl(&[0; 10], 4, 4, 0, 1).is_err());
        assert!(shuffle_view_impl(&synthetic(0, 16, 2), 16, 16, 0, 3).is_err());
        let px = synthetic(0, 64, 2);
        assert!(splice_preview_impl(&px, &px, 64, 0, "circle").is_err());
    }

    #[test]
    fn splice_changes_only_masked_pixels() {
        let (a, b) = (synthetic(1, 64, 4), synthetic(2, 64, 4));
        let p = splice_preview_impl(&a, &b, 64, 5, "either").unwrap();
        assert!((0.10..=0.50).contains(&p.coverage));
        for i in 0..64 * 64 {
            let src = if p.mask[4 * i] == 255 { &b } else { &a };
            assert_eq!(&p.spliced[4 * i..4 * i + 4], &src[4 * i..4 * i + 4]);
        }
    }
}
