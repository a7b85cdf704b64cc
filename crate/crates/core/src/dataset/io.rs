use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageFormat, ImageReader, Luma};

use crate::error::{domain_err, shape_err, Error, Result};
use crate::image::Image;

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => Ok(ImageFormat::Png),
        Some("tif" | "tiff") => Ok(ImageFormat::Tiff),
        other => Err(format_err(path, format!("extension {other:?} is not png, tif or tiff"))),
    }
}

/// Loads a single-channel 8- or 16-bit PNG/TIFF, scaled to `[0, 1]` by
/// `2^bits - 1`.
pub fn load_image(path: &Path) -> Result<Image> {
    let format = format_for(path)?;
    let reader = ImageReader::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    let mut reader = reader;
    reader.set_format(format);
    let decoded = reader.decode().map_err(|e| format_err(path, e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (data, bits): (Vec<f64>, u8) = match decoded {
        DynamicImage::ImageLuma8(buf) => (buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(), 8),
        DynamicImage::ImageLuma16(buf) => (buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(), 16),
        other => {
            let color = other.color();
            let reason = if color.channel_count() != 1 {
                format!(
                    "{} channels ({color:?}); only single-channel images are supported",
                    color.channel_count()
                )
            } else {
                format!(
                    "bit depth {} ({color:?}); only 8 or 16 bits are supported",
                    color.bits_per_pixel()
                )
            };
            return Err(format_err(path, reason));
        }
    };
    Ok(Image::new(h, w, data)?.with_bit_depth(bits))
}

/// Clips to `[0, 1]`, quantizes to `bit_depth` (8 or 16) and writes a PNG or
/// TIFF chosen by extension.
pub fn save_image(img: &Image, path: &Path, bit_depth: u8) -> Result<()> {
    let format = format_for(path)?;
    let (w, h) = (img.width() as u32, img.height() as u32);
    let quantize = |max: f64| img.data().iter().map(move |&v| (v.clamp(0.0, 1.0) * max).round());
    let dynamic = match bit_depth {
        8 => {
            let raw: Vec<u8> = quantize(255.0).map(|v| v as u8).collect();
            DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).expect("buffer size"))
        }
        16 => {
            let raw: Vec<u16> = quantize(65535.0).map(|v| v as u16).collect();
            DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).expect("buffer size"))
        }
        other => return Err(domain_err!("bit depth must be 8 or 16, got {other}")),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("create {}", parent.display()), e))?;
    }
    dynamic
        .save_with_format(path, format)
        .map_err(|e| format_err(path, e.to_string()))
}

/// Pixel-wise mean of at least two equally sized frames. Each pixel's
/// values are accumulated in sorted order as offsets from their minimum, so
/// the result does not depend on the order of `frames` and identical frames
/// average to themselves exactly.
pub fn build_reference(frames: &[Image]) -> Result<Image> {
    if frames.len() < 2 {
        return Err(domain_err!("need at least 2 frames, got {}", frames.len()));
    }
    let (h, w) = frames[0].dims();
    if let Some(bad) = frames.iter().find(|f| f.dims() != (h, w)) {
        return Err(shape_err!(
            "frame {}x{} differs from {h}x{w}",
            bad.height(),
            bad.width()
        ));
    }
    let n = frames.len() as f64;
    let mut column = vec![0.0; frames.len()];
    let data = (0..h * w)
        .map(|i| {
            for (slot, f) in column.iter_mut().zip(frames) {
                *slot = f.data()[i];
            }
            column.sort_by(f64::total_cmp);
            let lo = column[0];
            lo + column.iter().map(|v| v - lo).sum::<f64>() / n
        })
        .collect();
    Image::new(h, w, data)
}

/// PNG/TIFF files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(format!("read dir {}", dir.display()), e))?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry
            .map_err(|e| Error::io(format!("read dir {}", dir.display()), e))?
            .path();
        if path.is_file() && format_for(&path).is_ok() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
