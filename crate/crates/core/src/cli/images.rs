//! Image files in and out: 8-bit sRGB PNG/JPEG mapped to [0, 1] by /255,
//! exported with half-away-from-zero rounding.

use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{GrayImage, RgbImage};

use crate::plane::{ImagePlane, TamperMask};

use super::CliError;

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Image files of a directory sorted by name, or the names given in `list`
/// (one per line, relative to `dir`; blank lines and `#` comments skipped).
pub fn list_images(dir: &Path, list: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::MissingData(format!("image directory {} not found", dir.display())));
    }
    let files = match list {
        Some(l) => {
            let text = std::fs::read_to_string(l)
                .map_err(|e| CliError::MissingData(format!("split list {}: {e}", l.display())))?;
            let mut out = Vec::new();
            for name in text.lines().map(str::trim).filter(|s| !s.is_empty() && !s.starts_with('#')) {
                let p = dir.join(name);
                if !p.is_file() {
                    return Err(CliError::MissingData(format!("listed image {} not found", p.display())));
                }
                out.push(p);
            }
            out
        }
        None => {
            let entries =
                std::fs::read_dir(dir).map_err(|e| CliError::MissingData(format!("{}: {e}", dir.display())))?;
            let mut out: Vec<PathBuf> =
                entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| is_image(p)).collect();
            out.sort();
            out
        }
    };
    if files.is_empty() {
        return Err(CliError::MissingData(format!("no PNG/JPEG images in {}", dir.display())));
    }
    Ok(files)
}

/// A single image file or every image in a directory.
pub fn input_images(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.is_dir() {
        list_images(path, None)
    } else if path.is_file() {
        Ok(vec![path.to_path_buf()])
    } else {
        Err(CliError::MissingData(format!("input {} not found", path.display())))
    }
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

/// Center-crops to a square and resamples to `size`.
fn fit(img: RgbImage, size: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let side = w.min(h);
    let cropped = imageops::crop_imm(&img, (w - side) / 2, (h - side) / 2, side, side).to_image();
    if side == size {
        cropped
    } else {
        imageops::resize(&cropped, size, size, FilterType::Lanczos3)
    }
}

/// Loads an image that must be `size x size`, or is fitted to it when
/// `resize` is set.
pub fn load_plane(path: &Path, size: usize, resize: bool) -> Result<ImagePlane, CliError> {
    let img = image::open(path).map_err(|e| CliError::MissingData(format!("{}: {e}", path.display())))?.to_rgb8();
    let (w, h) = img.dimensions();
    let img = if (w as usize, h as usize) == (size, size) {
        img
    } else if resize {
        log::warn!("{}: {w}x{h} center-cropped and resized to {size}x{size}", path.display());
        fit(img, size as u32)
    } else {
        return Err(CliError::SizeMismatch(format!(
            "{} is {w}x{h}, the model expects {size}x{size} (pass --resize to crop and resample)",
            path.display()
        )));
    };
    Ok(ImagePlane::from_rgb8(size, size, img.as_raw())?)
}

pub fn load_mask(path: &Path, size: usize) -> Result<TamperMask, CliError> {
    let img = image::open(path).map_err(|e| CliError::MissingPairs(format!("{}: {e}", path.display())))?.to_luma8();
    let (w, h) = img.dimensions();
    if (w as usize, h as usize) != (size, size) {
        return Err(CliError::SizeMismatch(format!("mask {} is {w}x{h}, expected {size}x{size}", path.display())));
    }
    Ok(TamperMask::from_luma8(size, size, img.as_raw())?)
}

fn unwritable(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Unwritable(format!("{}: {e}", path.display()))
}

pub fn save_plane(path: &Path, img: &ImagePlane) -> Result<(), CliError> {
    let (w, h) = img.dims();
    let buf = RgbImage::from_raw(w as u32, h as u32, img.to_rgb8()).expect("buffer matches dimensions");
    buf.save(path).map_err(|e| unwritable(path, e))
}

/// Single-channel PNG, 255 = tampered.
pub fn save_mask(path: &Path, mask: &TamperMask) -> Result<(), CliError> {
    save_luma(path, mask.width(), mask.height(), mask.to_luma8())
}

pub fn save_luma(path: &Path, width: usize, height: usize, data: Vec<u8>) -> Result<(), CliError> {
    let buf = GrayImage::from_raw(width as u32, height as u32, data).expect("buffer matches dimensions");
    buf.save(path).map_err(|e| unwritable(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| unwritable(path, e))
}

pub fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| unwritable(dir, e))
}
