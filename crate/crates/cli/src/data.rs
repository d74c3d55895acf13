//! Dataset selection from the `dataset.*` keys.

use ckn::io::{list_images, load_cifar10, load_image_folder, read_image, Config, Split};
use ckn::tasks::rgb_to_ycbcr;
use ckn::tasks::synth::{grating_dataset, synthetic_scene};
use ckn::{CknError, Map, Result};

use crate::settings;

pub struct Labeled {
    pub images: Vec<Map>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

fn limit(cfg: &Config, key: &str) -> Result<Option<usize>> {
    cfg.get(key)
}

/// Labelled images on `[0, 1]`.
pub fn labeled(cfg: &Config, split: Split, seed: u64) -> Result<Labeled> {
    let kind = cfg.str("dataset.kind").unwrap_or("synthetic");
    let limit_key = match split {
        Split::Train => "dataset.train_limit",
        Split::Test => "dataset.test_limit",
    };
    match kind {
        "cifar10" => {
            let dir = settings::path(cfg, "dataset.path")?;
            let (images, labels) = load_cifar10(&dir, split, limit(cfg, limit_key)?)?;
            Ok(Labeled {
                images,
                labels,
                classes: 10,
            })
        }
        "image-folder" => {
            let key = match split {
                Split::Train => "dataset.path",
                Split::Test => "dataset.test_path",
            };
            let (images, labels, names) = load_image_folder(&settings::path(cfg, key)?)?;
            let mut images: Vec<Map> = images.into_iter().map(|m| m.map_values(|v| v / 255.0)).collect();
            let mut labels = labels;
            if let Some(l) = limit(cfg, limit_key)? {
                images.truncate(l);
                labels.truncate(l);
            }
            Ok(Labeled {
                images,
                labels,
                classes: names.len(),
            })
        }
        "synthetic" => {
            let classes = cfg.get_or("dataset.classes", 4)?;
            let channels = cfg.get_or("dataset.channels", 1)?;
            let size = cfg.get_or("dataset.size", 16)?;
            let (n, stream) = match split {
                Split::Train => (limit(cfg, limit_key)?.unwrap_or(200), seed),
                Split::Test => (limit(cfg, limit_key)?.unwrap_or(100), seed ^ 0x5eed),
            };
            let (images, labels) = grating_dataset(n, classes, channels, size, stream);
            Ok(Labeled {
                images,
                labels,
                classes,
            })
        }
        other => Err(cfg.error(
            "dataset.kind",
            format!("unknown kind '{other}' (cifar10, image-folder or synthetic)"),
        )),
    }
}

/// Luminance on `[0, 255]`; gray images are used as is.
pub fn luma(image: &Map) -> Result<Map> {
    match image.channels() {
        1 => Ok(image.clone()),
        3 => Ok(rgb_to_ycbcr(image)?.channel(0)),
        c => Err(CknError::UnsupportedFormat(format!("{c}-channel image"))),
    }
}

/// Training images for super-resolution: `sr.images` or synthetic scenes.
pub fn sr_images(cfg: &Config, seed: u64) -> Result<Vec<Map>> {
    match cfg.str("sr.images") {
        Some(dir) => list_images(std::path::Path::new(dir))?
            .iter()
            .map(|p| read_image(p).and_then(|m| luma(&m)))
            .collect(),
        None => {
            let n = cfg.get_or("sr.synthetic_images", 8usize)?;
            let size = cfg.get_or("sr.synthetic_size", 96usize)?;
            Ok((0..n as u64).map(|i| synthetic_scene(size, size, seed.wrapping_add(i))).collect())
        }
    }
}
