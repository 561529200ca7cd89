//! Lossless 8/16-bit raster IO. Pixel values are treated as linear raw
//! intensities in `[0, 1]`; colour profiles and metadata are ignored.

use std::path::{Path, PathBuf};

use burstforge_core::objective::gamma_value;
use burstforge_core::Tensor;
use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};

const EXTENSIONS: [&str; 6] = ["png", "tif", "tiff", "pgm", "ppm", "pnm"];

/// Image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let read = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in read {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// One `[H, W]` plane per colour channel (1 for grayscale, 3 for colour).
/// Alpha is dropped.
pub fn read_channels(path: &Path) -> Result<Vec<Tensor<f64>>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let buf = img.into_rgb16();
        Ok((0..3)
            .map(|c| Tensor::from_fn(&[h, w], |i| buf.as_raw()[i * 3 + c] as f64 / 65535.0))
            .collect())
    } else {
        let buf = img.into_luma16();
        Ok(vec![Tensor::from_fn(&[h, w], |i| buf.as_raw()[i] as f64 / 65535.0)])
    }
}

/// Channel mean, used when a colour image feeds a grayscale pipeline.
pub fn to_gray(channels: &[Tensor<f64>]) -> Tensor<f64> {
    let n = channels.len() as f64;
    Tensor::from_fn(channels[0].shape(), |i| channels.iter().map(|c| c.data()[i]).sum::<f64>() / n)
}

pub fn read_gray(path: &Path) -> Result<Tensor<f64>> {
    Ok(to_gray(&read_channels(path)?))
}

fn quantize(v: f64, gamma: Option<f64>) -> u16 {
    let v = match gamma {
        Some(g) => gamma_value(v, g),
        None => v.clamp(0.0, 1.0),
    };
    (v * 65535.0).round() as u16
}

/// Write 1 or 3 planes as a 16-bit PNG, clamped to `[0, 1]` and optionally
/// gamma-corrected with exponent `1/gamma`.
pub fn write_png16(path: &Path, channels: &[Tensor<f64>], gamma: Option<f64>) -> Result<()> {
    let (h, w) = channels
        .first()
        .ok_or_else(|| Error::Data("no channels to write".into()))?
        .hw();
    let (wu, hu) = (w as u32, h as u32);
    let img = match channels.len() {
        1 => {
            let raw = channels[0].data().iter().map(|&v| quantize(v, gamma)).collect();
            DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_raw(wu, hu, raw).expect("buffer size"))
        }
        3 => {
            let raw = (0..h * w)
                .flat_map(|i| channels.iter().map(move |c| quantize(c.data()[i], gamma)))
                .collect();
            DynamicImage::ImageRgb16(ImageBuffer::<Rgb<u16>, _>::from_raw(wu, hu, raw).expect("buffer size"))
        }
        n => return Err(Error::Data(format!("cannot write an image with {n} channels"))),
    };
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })
}
