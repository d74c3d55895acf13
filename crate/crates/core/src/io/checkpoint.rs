//! Versioned little-endian checkpoint format.
//!
//! ```text
//! "SCKN" | u32 version | u32 layers
//! per layer: u32 in_channels, u32 patch_size, u32 filters, u32 patch_dim,
//!            f64 alpha, f64 epsilon,
//!            u8 pooled [f64 subsampling, f64 beta, f64 radius, u8 normalize],
//!            f64 filters (patch_dim x filters, column-major)
//! u32 input_channels
//! head:      u8 kind (0 none, 1 classifier, 2 super-resolution)
//!            [u32 classes or scale, u32 rows, u32 cols, f64 lambda, f64 weights row-major]
//! whitening: u8 present [u32 window, u32 patch_size, u32 channels, f64 epsilon,
//!            u32 patches, u64 seed, u32 dim, f64 zca row-major]
//! history:   u32 count, per epoch u32 epoch, f64 objective, f64 eta, u8 accepted, u32 active
//! u64 seed
//! ```
//! Values are stored as `f64` whatever the compute precision.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::error::{CknError, Result};
use crate::kernel::KernelSpec;
use crate::layer::{LayerParams, NetworkParams};
use crate::maps::PoolSpec;
use crate::optim::{EpochRecord, LinearModel};
use crate::scalar::Real;
use crate::tasks::whiten::{LocalWhitening, WhiteningOptions};

pub const MAGIC: &[u8; 4] = b"SCKN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Head<T> {
    None,
    Classifier { classes: u32, model: LinearModel<T> },
    SuperResolution { scale: u32, model: LinearModel<T> },
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub net: NetworkParams<T>,
    pub head: Head<T>,
    pub whitening: Option<LocalWhitening<T>>,
    pub history: Vec<EpochRecord>,
    pub seed: u64,
}

impl<T: Real> Checkpoint<T> {
    pub fn new(net: NetworkParams<T>) -> Self {
        Checkpoint {
            net,
            head: Head::None,
            whitening: None,
            history: Vec::new(),
            seed: 0,
        }
    }
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| CknError::InvalidArgument(format!("{what} {n} does not fit in u32")))
}

fn write_matrix_row_major<T: Real>(out: &mut Vec<u8>, m: &Array2<T>) {
    for &v in m.iter() {
        out.write_f64::<LE>(v.to_f64_lossy()).expect("vec write");
    }
}

/// Serializes to bytes.
pub fn encode_checkpoint<T: Real>(ck: &Checkpoint<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let w = &mut out;
    w.write_u32::<LE>(VERSION).expect("vec write");
    w.write_u32::<LE>(u32_of(ck.net.depth(), "layer count")?).expect("vec write");
    for layer in ck.net.layers() {
        w.write_u32::<LE>(u32_of(layer.in_channels(), "channels")?).expect("vec write");
        w.write_u32::<LE>(u32_of(layer.patch_size(), "patch size")?).expect("vec write");
        w.write_u32::<LE>(u32_of(layer.filters_out(), "filters")?).expect("vec write");
        w.write_u32::<LE>(u32_of(layer.patch_dim(), "patch dim")?).expect("vec write");
        w.write_f64::<LE>(layer.kernel().alpha()).expect("vec write");
        w.write_f64::<LE>(layer.epsilon()).expect("vec write");
        match layer.pool() {
            Some(p) => {
                w.write_u8(1).expect("vec write");
                w.write_f64::<LE>(p.subsampling).expect("vec write");
                w.write_f64::<LE>(p.beta).expect("vec write");
                w.write_f64::<LE>(p.truncation_radius).expect("vec write");
                w.write_u8(p.normalize as u8).expect("vec write");
            }
            None => w.write_u8(0).expect("vec write"),
        }
        // column-major: iterate the transpose in logical order
        for &v in layer.filters().t().iter() {
            w.write_f64::<LE>(v.to_f64_lossy()).expect("vec write");
        }
    }
    w.write_u32::<LE>(u32_of(ck.net.input_channels(), "input channels")?).expect("vec write");
    let mut head_block = |kind: u8, tag: u32, model: &LinearModel<T>| -> Result<()> {
        w.write_u8(kind).expect("vec write");
        w.write_u32::<LE>(tag).expect("vec write");
        w.write_u32::<LE>(u32_of(model.outputs(), "rows")?).expect("vec write");
        w.write_u32::<LE>(u32_of(model.dim(), "cols")?).expect("vec write");
        w.write_f64::<LE>(model.lambda()).expect("vec write");
        write_matrix_row_major(w, model.weights());
        Ok(())
    };
    match &ck.head {
        Head::None => w.write_u8(0).expect("vec write"),
        Head::Classifier { classes, model } => head_block(1, *classes, model)?,
        Head::SuperResolution { scale, model } => head_block(2, *scale, model)?,
    }
    match ck.whitening.as_ref().and_then(|wh| wh.zca().map(|z| (wh, z))) {
        Some((wh, zca)) => {
            let o = wh.options();
            w.write_u8(1).expect("vec write");
            w.write_u32::<LE>(u32_of(o.window, "window")?).expect("vec write");
            w.write_u32::<LE>(u32_of(o.patch_size, "patch size")?).expect("vec write");
            let channels = zca.nrows() / (o.patch_size * o.patch_size);
            w.write_u32::<LE>(u32_of(channels, "channels")?).expect("vec write");
            w.write_f64::<LE>(o.epsilon).expect("vec write");
            w.write_u32::<LE>(u32_of(o.patches, "patches")?).expect("vec write");
            w.write_u64::<LE>(o.seed).expect("vec write");
            w.write_u32::<LE>(u32_of(zca.nrows(), "dim")?).expect("vec write");
            write_matrix_row_major(w, zca);
        }
        None => w.write_u8(0).expect("vec write"),
    }
    w.write_u32::<LE>(u32_of(ck.history.len(), "history length")?).expect("vec write");
    for r in &ck.history {
        w.write_u32::<LE>(u32_of(r.epoch, "epoch")?).expect("vec write");
        w.write_f64::<LE>(r.objective).expect("vec write");
        w.write_f64::<LE>(r.eta).expect("vec write");
        w.write_u8(r.accepted as u8).expect("vec write");
        w.write_u32::<LE>(u32_of(r.active, "active count")?).expect("vec write");
    }
    w.write_u64::<LE>(ck.seed).expect("vec write");
    Ok(out)
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl Reader<'_> {
    fn offset(&self) -> u64 {
        self.cur.position()
    }

    fn fail(&self, message: impl Into<String>) -> CknError {
        CknError::Format {
            offset: self.offset(),
            message: message.into(),
        }
    }

    fn truncated(&self, what: &str) -> CknError {
        self.fail(format!("truncated while reading {what}"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        self.cur.read_u8().map_err(|_| self.truncated(what))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.cur.read_u32::<LE>().map_err(|_| self.truncated(what))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        self.cur.read_u64::<LE>().map_err(|_| self.truncated(what))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        self.cur.read_f64::<LE>().map_err(|_| self.truncated(what))
    }

    fn size(&mut self, what: &str, max: u64) -> Result<usize> {
        let at = self.offset();
        let v = self.u32(what)? as u64;
        if v > max {
            return Err(CknError::Format {
                offset: at,
                message: format!("{what} {v} is implausible"),
            });
        }
        Ok(v as usize)
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let remaining = self.cur.get_ref().len() as u64 - self.offset();
        if (count as u64).saturating_mul(8) > remaining {
            return Err(self.truncated(what));
        }
        (0..count).map(|_| self.f64(what)).collect()
    }
}

const MAX_DIM: u64 = 1 << 24;

/// Parses bytes produced by [`encode_checkpoint`].
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { cur: Cursor::new(bytes) };
    let mut magic = [0u8; 4];
    r.cur
        .read_exact(&mut magic)
        .map_err(|_| CknError::Format {
            offset: 0,
            message: "file too short for the magic number".into(),
        })?;
    if &magic != MAGIC {
        return Err(CknError::Format {
            offset: 0,
            message: format!("bad magic {magic:?}, expected \"SCKN\""),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CknError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let depth = r.size("layer count", 4096)?;
    let mut layers = Vec::with_capacity(depth);
    for _ in 0..depth {
        let start = r.offset();
        let in_channels = r.size("in_channels", MAX_DIM)?;
        let patch_size = r.size("patch_size", 1 << 12)?;
        let filters = r.size("filters", MAX_DIM)?;
        let patch_dim = r.size("patch_dim", MAX_DIM)?;
        let alpha = r.f64("alpha")?;
        let epsilon = r.f64("epsilon")?;
        let pool = match r.u8("pool flag")? {
            0 => None,
            1 => Some(PoolSpec {
                subsampling: r.f64("subsampling")?,
                beta: r.f64("beta")?,
                truncation_radius: r.f64("truncation radius")?,
                normalize: r.u8("normalize flag")? != 0,
            }),
            other => return Err(r.fail(format!("pool flag {other}"))),
        };
        if patch_dim != in_channels * patch_size * patch_size {
            return Err(CknError::Format {
                offset: start,
                message: format!("patch_dim {patch_dim} != {in_channels}*{patch_size}^2"),
            });
        }
        let values = r.f64s(patch_dim * filters, "filter matrix")?;
        let z = Array2::from_shape_fn((patch_dim, filters), |(i, j)| T::lit(values[j * patch_dim + i]));
        let kernel = KernelSpec::rbf(alpha).map_err(|e| CknError::Format {
            offset: start,
            message: e.to_string(),
        })?;
        let layer = LayerParams::with_raw_filters(z, kernel, patch_size, in_channels, pool, epsilon).map_err(|e| {
            CknError::Format {
                offset: start,
                message: e.to_string(),
            }
        })?;
        layers.push(layer);
    }
    let input_channels = r.size("input channels", MAX_DIM)?;
    let net = NetworkParams::new(input_channels, layers)?;

    let head_at = r.offset();
    let model = |r: &mut Reader| -> Result<(u32, LinearModel<T>)> {
        let tag = r.u32("head tag")?;
        let rows = r.size("head rows", MAX_DIM)?;
        let cols = r.size("head cols", 1 << 31)?;
        let lambda = r.f64("lambda")?;
        let values = r.f64s(rows * cols, "head weights")?;
        let w = Array2::from_shape_fn((rows, cols), |(i, j)| T::lit(values[i * cols + j]));
        let m = LinearModel::new(w, lambda).map_err(|e| CknError::Format {
            offset: head_at,
            message: e.to_string(),
        })?;
        Ok((tag, m))
    };
    let head = match r.u8("head kind")? {
        0 => Head::None,
        1 => {
            let (classes, model) = model(&mut r)?;
            Head::Classifier { classes, model }
        }
        2 => {
            let (scale, model) = model(&mut r)?;
            Head::SuperResolution { scale, model }
        }
        other => return Err(r.fail(format!("unknown head kind {other}"))),
    };

    let whitening = match r.u8("whitening flag")? {
        0 => None,
        1 => {
            let window = r.size("window", 1 << 12)?;
            let patch_size = r.size("patch size", 1 << 12)?;
            let channels = r.size("channels", MAX_DIM)?;
            let epsilon = r.f64("epsilon")?;
            let patches = r.size("patches", u32::MAX as u64)?;
            let seed = r.u64("whitening seed")?;
            let dim = r.size("dim", MAX_DIM)?;
            let values = r.f64s(dim * dim, "zca matrix")?;
            let zca = Array2::from_shape_fn((dim, dim), |(i, j)| T::lit(values[i * dim + j]));
            let options = WhiteningOptions {
                window,
                patch_size,
                patches,
                epsilon,
                seed,
            };
            Some(LocalWhitening::from_parts(options, channels, zca).map_err(|e| r.fail(e.to_string()))?)
        }
        other => return Err(r.fail(format!("whitening flag {other}"))),
    };

    let count = r.size("history length", MAX_DIM)?;
    let mut history = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        history.push(EpochRecord {
            epoch: r.u32("epoch")? as usize,
            objective: r.f64("objective")?,
            eta: r.f64("eta")?,
            accepted: r.u8("accepted")? != 0,
            active: r.u32("active")? as usize,
        });
    }
    let seed = r.u64("seed")?;
    if (r.offset() as usize) != bytes.len() {
        return Err(r.fail("trailing bytes after checkpoint"));
    }
    Ok(Checkpoint {
        net,
        head,
        whitening,
        history,
        seed,
    })
}

pub fn save_checkpoint<T: Real>(path: &Path, ck: &Checkpoint<T>) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    let mut f = std::fs::File::create(path).map_err(|e| CknError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| CknError::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| CknError::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::{LayerConfig, NetworkConfig};

    fn sample() -> Checkpoint<f64> {
        let cfg = NetworkConfig {
            input_channels: 2,
            layers: vec![LayerConfig::new(3, 4, 2.0), LayerConfig::new(1, 3, 1.0)],
        };
        let net = NetworkParams::random(&cfg, 7).unwrap();
        let w = Array2::from_shape_fn((3, 12), |(i, j)| (i as f64 - 1.3) * 0.1 + j as f64 * 1e-3);
        let zca = Array2::from_shape_fn((18, 18), |(i, j)| if i == j { 1.5 } else { 0.01 * (i + j) as f64 });
        let wh = LocalWhitening::from_parts(WhiteningOptions::default(), 2, zca).unwrap();
        Checkpoint {
            net,
            head: Head::Classifier {
                classes: 3,
                model: LinearModel::new(w, 0.125).unwrap(),
            },
            whitening: Some(wh),
            history: vec![EpochRecord {
                epoch: 0,
                objective: 0.5,
                eta: 10.0,
                accepted: true,
                active: 100,
            }],
            seed: 42,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = encode_checkpoint(&ck).unwrap();
        let back: Checkpoint<f64> = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.net.depth(), 2);
        for (a, b) in ck.net.layers().iter().zip(back.net.layers()) {
            assert_eq!(a.filters(), b.filters());
            assert_eq!(a.kernel(), b.kernel());
            assert_eq!(a.pool(), b.pool());
            assert_eq!(a.epsilon().to_bits(), b.epsilon().to_bits());
        }
        assert_eq!(back.head, ck.head);
        assert_eq!(back.history, ck.history);
        assert_eq!(back.seed, 42);
        assert_eq!(back.whitening.unwrap().zca(), ck.whitening.unwrap().zca());
        assert_eq!(encode_checkpoint(&back_again(&bytes)).unwrap(), bytes);
    }

    fn back_again(bytes: &[u8]) -> Checkpoint<f64> {
        decode_checkpoint(bytes).unwrap()
    }

    #[test]
    fn corrupt_magic_version_and_truncation() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        match decode_checkpoint::<f64>(&bad) {
            Err(CknError::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
        let mut newer = bytes.clone();
        newer[4..8].copy_from_slice(&(VERSION + 1).to_le_bytes());
        assert!(matches!(
            decode_checkpoint::<f64>(&newer),
            Err(CknError::VersionMismatch { found, expected }) if found == VERSION + 1 && expected == VERSION
        ));
        for cut in [3, 10, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(decode_checkpoint::<f64>(&bytes[..cut]), Err(CknError::Format { .. })),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn f32_networks_load_from_f64_storage() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        let ck: Checkpoint<f32> = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ck.net.depth(), 2);
    }
}
