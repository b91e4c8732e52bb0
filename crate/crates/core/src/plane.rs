//! Plain-array image and mask containers.
//!
//! `ImagePlane` stores an RGB image channel-planar (`c * h * w + y * w + x`),
//! which is the same memory order the tensor code uses for a single batch
//! element. Values are nominally in `[0, 1]` but nothing here clips them;
//! clipping and 8-bit quantization happen only on export.

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ImagePlane {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; CHANNELS * width * height] }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, data: vec![value; CHANNELS * width * height] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != CHANNELS * width * height {
            return Err(Error::shape(format!(
                "expected {} samples for a {width}x{height} RGB plane, got {}",
                CHANNELS * width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Builds an image from `f(channel, y, x)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(CHANNELS * width * height);
        for c in 0..CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    /// Channel-mean grayscale, row-major `h * w`.
    pub fn gray(&self) -> Vec<f64> {
        let n = self.width * self.height;
        (0..n).map(|i| (0..CHANNELS).map(|c| self.data[c * n + i] as f64).sum::<f64>() / CHANNELS as f64).collect()
    }

    pub fn clipped(&self) -> Self {
        Self { width: self.width, height: self.height, data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect() }
    }

    /// Clip to `[0, 1]`, scale to 255 and round half away from zero.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let n = self.width * self.height;
        let mut out = Vec::with_capacity(CHANNELS * n);
        for i in 0..n {
            for c in 0..CHANNELS {
                out.push(quantize_u8(self.data[c * n + i]));
            }
        }
        out
    }

    /// Interleaved 8-bit RGB to a plane via `/255`.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        let n = width * height;
        if rgb.len() != CHANNELS * n {
            return Err(Error::shape(format!("expected {} bytes, got {}", CHANNELS * n, rgb.len())));
        }
        let mut data = vec![0.0f32; CHANNELS * n];
        for i in 0..n {
            for c in 0..CHANNELS {
                data[c * n + i] = rgb[i * CHANNELS + c] as f32 / 255.0;
            }
        }
        Ok(Self { width, height, data })
    }

    /// Simulates an 8-bit export and re-import.
    pub fn quantized(&self) -> Self {
        Self::from_rgb8(self.width, self.height, &self.to_rgb8()).expect("dimensions are self-consistent")
    }

    pub fn ensure_same_dims(&self, other: &ImagePlane, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn quantize_u8(v: f32) -> u8 {
    // `f32::round` rounds half away from zero.
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Per-pixel tamper map. Soft masks live in `[0, 1]`; binary masks in `{0, 1}`
/// and remember the threshold that produced them (if any).
#[derive(Debug, Clone, PartialEq)]
pub struct TamperMask {
    width: usize,
    height: usize,
    data: Vec<f32>,
    threshold: Option<f32>,
}

impl TamperMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height], threshold: None }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, data: vec![value; width * height], threshold: None }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "expected {} mask samples for {width}x{height}, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data, threshold: None })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Threshold used to binarize this mask, if it came from [`binarize`].
    pub fn threshold(&self) -> Option<f32> {
        self.threshold
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Fraction of pixels equal to 1.
    pub fn coverage(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().filter(|&&v| v >= 0.5).count() as f64 / self.data.len() as f64
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// 8-bit single-channel export, 255 = tampered.
    pub fn to_luma8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_u8(v)).collect()
    }

    pub fn from_luma8(width: usize, height: usize, luma: &[u8]) -> Result<Self> {
        Self::from_data(width, height, luma.iter().map(|&v| v as f32 / 255.0).collect())
    }
}

/// Elementwise indicator `m >= threshold`.
pub fn binarize(mask: &TamperMask, threshold: f32) -> TamperMask {
    TamperMask {
        width: mask.width,
        height: mask.height,
        data: mask.data.iter().map(|&v| if v >= threshold { 1.0 } else { 0.0 }).collect(),
        threshold: Some(threshold),
    }
}

/// `m * fg + (1 - m) * bg`, mask broadcast over channels.
///
/// Binary masks select bit-exactly from one source; this is the shared kernel
/// behind both compositing and splicing.
pub fn blend(fg: &ImagePlane, bg: &ImagePlane, mask: &TamperMask) -> Result<ImagePlane> {
    fg.ensure_same_dims(bg, "blend")?;
    if fg.dims() != mask.dims() {
        return Err(Error::shape(format!(
            "blend: mask {}x{} vs image {}x{}",
            mask.width, mask.height, fg.width, fg.height
        )));
    }
    let n = fg.width * fg.height;
    let mut out = ImagePlane::new(fg.width, fg.height);
    for c in 0..CHANNELS {
        for i in 0..n {
            let m = mask.data[i];
            let idx = c * n + i;
            out.data[idx] = if m == 1.0 {
                fg.data[idx]
            } else if m == 0.0 {
                bg.data[idx]
            } else {
                bg.data[idx] + m * (fg.data[idx] - bg.data[idx])
            };
        }
    }
    Ok(out)
}
