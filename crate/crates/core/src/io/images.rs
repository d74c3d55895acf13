//! 8-bit PNG and binary PGM/PPM images as maps on `[0, 255]`.

use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};

use crate::error::{CknError, Result};
use crate::maps::SpatialMap;
use crate::scalar::Real;

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(ImageFormat::Png),
        "pgm" | "ppm" | "pnm" => Ok(ImageFormat::Pnm),
        other => Err(CknError::UnsupportedFormat(format!(
            "{}: extension '{other}' (expected png, pgm or ppm)",
            path.display()
        ))),
    }
}

fn codec_error(path: &Path, e: image::ImageError) -> CknError {
    match e {
        image::ImageError::IoError(io) => CknError::io(path, io),
        image::ImageError::Unsupported(u) => CknError::UnsupportedFormat(format!("{}: {u}", path.display())),
        other => CknError::Data(format!("{}: {other}", path.display())),
    }
}

/// Gray images give one channel, color images three; alpha is dropped.
/// Only 8-bit samples are accepted.
pub fn read_image(path: &Path) -> Result<SpatialMap<f64>> {
    let format = format_for(path)?;
    let bytes = std::fs::read(path).map_err(|e| CknError::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, format).map_err(|e| codec_error(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => {
            SpatialMap::from_vec(1, h, w, g.into_raw().into_iter().map(f64::from).collect())
        }
        DynamicImage::ImageLumaA8(_) => {
            let g = img.to_luma8();
            SpatialMap::from_vec(1, h, w, g.into_raw().into_iter().map(f64::from).collect())
        }
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            let rgb = img.to_rgb8();
            let raw = rgb.as_raw();
            Ok(SpatialMap::from_fn(3, h, w, |c, y, x| raw[(y * w + x) * 3 + c] as f64))
        }
        other => Err(CknError::UnsupportedFormat(format!(
            "{}: {:?} samples (only 8-bit gray or RGB)",
            path.display(),
            other.color()
        ))),
    }
}

/// Rounds and clamps to 8 bits and writes according to the extension.
pub fn write_image<T: Real>(path: &Path, image: &SpatialMap<T>) -> Result<()> {
    let format = format_for(path)?;
    let (c, h, w) = image.shape();
    let q = |v: T| v.to_f64_lossy().round().clamp(0.0, 255.0) as u8;
    let dynamic = match c {
        1 => {
            let raw: Vec<u8> = image.matrix().iter().map(|&v| q(v)).collect();
            DynamicImage::ImageLuma8(
                image::GrayImage::from_raw(w as u32, h as u32, raw).expect("buffer size matches"),
            )
        }
        3 => {
            let mut raw = Vec::with_capacity(3 * h * w);
            for p in 0..h * w {
                for ch in 0..3 {
                    raw.push(q(image.matrix()[[ch, p]]));
                }
            }
            DynamicImage::ImageRgb8(image::RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer size matches"))
        }
        other => {
            return Err(CknError::UnsupportedFormat(format!(
                "cannot write {other}-channel image to {}",
                path.display()
            )))
        }
    };
    dynamic
        .save_with_format(path, format)
        .map_err(|e| codec_error(path, e))
}

/// `dir/<class>/<image>`: classes are the sorted subdirectory names.
pub fn load_image_folder(dir: &Path) -> Result<(Vec<SpatialMap<f64>>, Vec<usize>, Vec<String>)> {
    let mut classes: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CknError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    classes.sort();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut names = Vec::new();
    for (k, class_dir) in classes.iter().enumerate() {
        names.push(class_dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
        for file in list_images(class_dir)? {
            images.push(read_image(&file)?);
            labels.push(k);
        }
    }
    if images.is_empty() {
        return Err(CknError::Data(format!("no images under {}", dir.display())));
    }
    Ok((images, labels, names))
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CknError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && format_for(p).is_ok())
        .collect();
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trips_8bit() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rgb = SpatialMap::from_fn(3, 5, 7, |_, _, _| rng.random_range(0..=255u8) as f64);
        let gray = SpatialMap::from_fn(1, 4, 3, |_, _, _| rng.random_range(0..=255u8) as f64);
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            write_image(&p, &rgb).unwrap();
            assert_eq!(read_image(&p).unwrap(), rgb);
        }
        for name in ["b.png", "b.pgm"] {
            let p = dir.path().join(name);
            write_image(&p, &gray).unwrap();
            assert_eq!(read_image(&p).unwrap(), gray);
        }
    }

    #[test]
    fn pgm_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.pgm");
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 10, 200, 255]);
        std::fs::write(&p, bytes).unwrap();
        let m = read_image(&p).unwrap();
        assert_eq!(m.shape(), (1, 2, 2));
        assert_eq!(m.matrix().iter().copied().collect::<Vec<_>>(), vec![0.0, 10.0, 200.0, 255.0]);
    }

    #[test]
    fn sixteen_bit_png_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.png");
        let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(2, 2, vec![0u16, 1000, 40000, 65535]).unwrap();
        DynamicImage::ImageLuma16(img).save(&p).unwrap();
        assert!(matches!(read_image(&p), Err(CknError::UnsupportedFormat(_))));
    }

    #[test]
    fn unknown_extension() {
        assert!(matches!(
            read_image(Path::new("x.gif")),
            Err(CknError::UnsupportedFormat(_))
        ));
    }
}
