//! File formats: JSON documents, 8-bit PNG/PGM rasters and the raw `f32`
//! latent sidecar.
//!
//! The sidecar is the ASCII magic `LATF32\0\0`, then width, height and
//! channels as little-endian `u32`, then the values as little-endian `f32`
//! in row-major order.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::diffusion::LatentImage;
use crate::error::{Error, Result};
use crate::meshproc::{BoxMask, GrayscaleMap};

const SIDECAR_MAGIC: &[u8; 8] = b"LATF32\0\0";

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a PNG or PNM image into `[0, 1]`: grayscale files keep one channel,
/// everything else becomes RGB.
pub fn read_image(path: &Path) -> Result<LatentImage> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, bytes) = match img {
        DynamicImage::ImageLuma8(g) => (1, g.into_raw()),
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            (1, img.to_luma8().into_raw())
        }
        other => (3, other.to_rgb8().into_raw()),
    };
    let data = bytes.into_iter().map(|b| f64::from(b) / 255.0).collect();
    LatentImage::from_vec(w, h, channels, data)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_raster(path: &Path, width: usize, height: usize, color: ExtendedColorType, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let out = BufWriter::new(file);
    let (w, h) = (width as u32, height as u32);
    let is_pnm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm"));
    let result = if is_pnm {
        let subtype = match color {
            ExtendedColorType::L8 => PnmSubtype::Graymap(SampleEncoding::Binary),
            _ => PnmSubtype::Pixmap(SampleEncoding::Binary),
        };
        PnmEncoder::new(out).with_subtype(subtype).write_image(bytes, w, h, color)
    } else {
        image::codecs::png::PngEncoder::new(out).write_image(bytes, w, h, color)
    };
    result.map_err(|e| Error::image(path, e))
}

/// Writes an image clamped to `[0, 1]`; the format follows the extension.
pub fn write_image(path: &Path, img: &LatentImage) -> Result<()> {
    let color = match img.channels() {
        1 => ExtendedColorType::L8,
        3 => ExtendedColorType::Rgb8,
        c => return Err(Error::ShapeMismatch(format!("cannot encode {c}-channel image"))),
    };
    let bytes: Vec<u8> = img.as_slice().iter().map(|&v| quantize(v)).collect();
    write_raster(path, img.width(), img.height(), color, &bytes)
}

pub fn write_gray(path: &Path, map: &GrayscaleMap) -> Result<()> {
    write_raster(path, map.width(), map.height(), ExtendedColorType::L8, &map.to_bytes())
}

pub fn write_mask(path: &Path, mask: &BoxMask) -> Result<()> {
    write_raster(path, mask.width(), mask.height(), ExtendedColorType::L8, &mask.to_bytes())
}

/// Reads an 8-bit grayscale raster back into `[0, 1]`.
pub fn read_gray(path: &Path) -> Result<GrayscaleMap> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    GrayscaleMap::from_vec(w, h, img.into_raw().into_iter().map(|b| f64::from(b) / 255.0).collect())
}

pub fn write_f32_sidecar(path: &Path, img: &LatentImage) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));
    write(SIDECAR_MAGIC)?;
    for d in [img.width(), img.height(), img.channels()] {
        write(&(d as u32).to_le_bytes())?;
    }
    for &v in img.as_slice() {
        write(&(v as f32).to_le_bytes())?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_f32_sidecar(path: &Path) -> Result<LatentImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = || Error::InvalidParameter(format!("{} is not a latent sidecar", path.display()));
    if bytes.len() < 20 || &bytes[..8] != SIDECAR_MAGIC {
        return Err(bad());
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (w, h, c) = (dim(0), dim(1), dim(2));
    let body = &bytes[20..];
    if body.len() != 4 * w * h * c {
        return Err(bad());
    }
    let data = body.chunks_exact(4).map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap()))).collect();
    LatentImage::from_vec(w, h, c, data)
}
