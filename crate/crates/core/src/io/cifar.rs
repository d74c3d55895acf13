//! CIFAR-10 binary batches: records of one label byte followed by 3072
//! pixel bytes (R, G then B planes, 32x32 row-major).

use std::path::Path;

use crate::error::{CknError, Result};
use crate::maps::SpatialMap;

pub const RECORD_BYTES: usize = 1 + 3 * 32 * 32;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Decodes records from a byte buffer; pixels are scaled to `[0, 1]`.
pub fn parse_cifar10(bytes: &[u8], limit: Option<usize>) -> Result<(Vec<SpatialMap<f64>>, Vec<usize>)> {
    let complete = bytes.len() / RECORD_BYTES;
    let wanted = limit.map_or(complete, |l| l.min(complete));
    if bytes.len() % RECORD_BYTES != 0 && limit.is_none_or(|l| l > complete) {
        return Err(CknError::Format {
            offset: (complete * RECORD_BYTES) as u64,
            message: format!(
                "truncated record: {} trailing bytes, records are {RECORD_BYTES} bytes",
                bytes.len() % RECORD_BYTES
            ),
        });
    }
    let mut images = Vec::with_capacity(wanted);
    let mut labels = Vec::with_capacity(wanted);
    for r in 0..wanted {
        let start = r * RECORD_BYTES;
        let label = bytes[start];
        if label > 9 {
            return Err(CknError::Format {
                offset: start as u64,
                message: format!("label byte {label} is not in 0..=9"),
            });
        }
        let px = &bytes[start + 1..start + RECORD_BYTES];
        let values = px.iter().map(|&b| b as f64 / 255.0).collect();
        images.push(SpatialMap::from_vec(3, 32, 32, values)?);
        labels.push(label as usize);
    }
    Ok((images, labels))
}

pub fn load_cifar10_file(path: &Path, limit: Option<usize>) -> Result<(Vec<SpatialMap<f64>>, Vec<usize>)> {
    let bytes = std::fs::read(path).map_err(|e| CknError::io(path, e))?;
    parse_cifar10(&bytes, limit)
}

/// Loads the standard batches from `dir`, stopping after `limit` images.
pub fn load_cifar10(dir: &Path, split: Split, limit: Option<usize>) -> Result<(Vec<SpatialMap<f64>>, Vec<usize>)> {
    let files: Vec<&str> = match split {
        Split::Train => TRAIN_FILES.to_vec(),
        Split::Test => vec![TEST_FILE],
    };
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let remaining = limit.map(|l| l - images.len());
        if remaining == Some(0) {
            break;
        }
        let (mut im, mut lb) = load_cifar10_file(&dir.join(f), remaining)?;
        images.append(&mut im);
        labels.append(&mut lb);
    }
    Ok((images, labels))
}
