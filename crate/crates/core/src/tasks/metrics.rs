use crate::error::{ensure, Result};
use crate::maps::SpatialMap;
use crate::scalar::Real;

pub const PEAK: f64 = 255.0;

/// Peak signal-to-noise ratio in dB over all channels, ignoring `shave`
/// pixels on every border. Identical inputs give `+inf`.
pub fn psnr<T: Real>(reference: &SpatialMap<T>, estimate: &SpatialMap<T>, shave: usize, peak: f64) -> Result<f64> {
    ensure!(
        reference.shape() == estimate.shape(),
        ShapeMismatch,
        "psnr of {:?} and {:?}",
        reference.shape(),
        estimate.shape()
    );
    let (c, h, w) = reference.shape();
    ensure!(
        h > 2 * shave && w > 2 * shave,
        InvalidArgument,
        "shaving {shave} pixels leaves nothing of a {h}x{w} image"
    );
    let mut sum = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        for y in shave..h - shave {
            for x in shave..w - shave {
                let d = reference.get(ch, y, x).to_f64_lossy() - estimate.get(ch, y, x).to_f64_lossy();
                sum += d * d;
                count += 1;
            }
        }
    }
    let mse = sum / count as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    })
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..size * size)
        .map(|k| {
            let (y, x) = ((k / size) as f64 - c, (k % size) as f64 - c);
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Mean structural similarity of two single-channel images on the `[0,
/// 255]` scale: 11x11 Gaussian window with `sigma = 1.5`, evaluated at
/// every position where the window fits.
pub fn ssim<T: Real>(reference: &SpatialMap<T>, estimate: &SpatialMap<T>) -> Result<f64> {
    ensure!(
        reference.shape() == estimate.shape(),
        ShapeMismatch,
        "ssim of {:?} and {:?}",
        reference.shape(),
        estimate.shape()
    );
    ensure!(reference.channels() == 1, ShapeMismatch, "ssim expects one channel");
    const SIZE: usize = 11;
    let (_, h, w) = reference.shape();
    ensure!(h >= SIZE && w >= SIZE, InvalidArgument, "ssim needs at least 11x11 pixels");
    let c1 = (0.01 * PEAK).powi(2);
    let c2 = (0.03 * PEAK).powi(2);
    let win = gaussian_window(SIZE, 1.5);
    let a: Vec<f64> = reference.matrix().iter().map(|v| v.to_f64_lossy()).collect();
    let b: Vec<f64> = estimate.matrix().iter().map(|v| v.to_f64_lossy()).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..=h - SIZE {
        for x in 0..=w - SIZE {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..SIZE {
                for dx in 0..SIZE {
                    let k = win[dy * SIZE + dx];
                    let p = (y + dy) * w + x + dx;
                    ma += k * a[p];
                    mb += k * b[p];
                    saa += k * a[p] * a[p];
                    sbb += k * b[p] * b[p];
                    sab += k * a[p] * b[p];
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}
