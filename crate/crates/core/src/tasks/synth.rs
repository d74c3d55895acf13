//! Procedural images for tests, demos and offline runs.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::maps::SpatialMap;

/// Sinusoidal grating in `[0, 1]` with orientation `angle` (radians),
/// `period` in pixels, plus uniform noise of amplitude `noise`.
pub fn oriented_grating(
    channels: usize,
    size: usize,
    angle: f64,
    period: f64,
    phase: f64,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> SpatialMap<f64> {
    let (s, c) = angle.sin_cos();
    let mut img = SpatialMap::zeros(channels, size, size);
    for ch in 0..channels {
        let gain = 0.8 + 0.2 * ch as f64 / channels.max(1) as f64;
        for y in 0..size {
            for x in 0..size {
                let t = (c * x as f64 + s * y as f64) * 2.0 * PI / period + phase;
                let v = 0.5 + 0.4 * gain * t.sin() + noise * rng.random_range(-1.0..1.0);
                img.set(ch, y, x, v.clamp(0.0, 1.0));
            }
        }
    }
    img
}

/// Labelled gratings; class `k` of `classes` has orientation `k pi /
/// classes`, random phase and period.
pub fn grating_dataset(
    n: usize,
    classes: usize,
    channels: usize,
    size: usize,
    seed: u64,
) -> (Vec<SpatialMap<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes.max(1);
        let angle = label as f64 * PI / classes as f64 + rng.random_range(-0.05..0.05);
        let period = rng.random_range(3.0..6.0);
        let phase = rng.random_range(0.0..2.0 * PI);
        images.push(oriented_grating(channels, size, angle, period, phase, 0.05, &mut rng));
        labels.push(label);
    }
    (images, labels)
}

/// A grayscale "scene" on `[0, 255]`: smooth shading, a few filled
/// shapes with sharp edges and some fine texture.
pub fn synthetic_scene(height: usize, width: usize, seed: u64) -> SpatialMap<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (gx, gy, base) = (
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(80.0..170.0),
    );
    let mut img: SpatialMap<f64> = SpatialMap::from_fn(1, height, width, |_, y, x| {
        base + 40.0 * (gx * x as f64 / width as f64 + gy * y as f64 / height as f64)
    });
    let shapes = rng.random_range(6..12);
    for _ in 0..shapes {
        let level = rng.random_range(10.0..245.0);
        let cy = rng.random_range(0.0..height as f64);
        let cx = rng.random_range(0.0..width as f64);
        let r = rng.random_range(3.0..(height.min(width) as f64 / 3.0).max(4.0));
        let square = rng.random_bool(0.5);
        let angle = rng.random_range(0.0..PI);
        let (s, c) = angle.sin_cos();
        for y in 0..height {
            for x in 0..width {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let inside = if square {
                    let u = c * dx + s * dy;
                    let v = -s * dx + c * dy;
                    u.abs() < r && v.abs() < 0.6 * r
                } else {
                    dx * dx + dy * dy < r * r
                };
                if inside {
                    img.set(0, y, x, level);
                }
            }
        }
    }
    let angle = rng.random_range(0.0..PI);
    let period = rng.random_range(4.0..9.0);
    let (s, c) = angle.sin_cos();
    SpatialMap::from_fn(1, height, width, |_, y, x| {
        let t = (c * x as f64 + s * y as f64) * 2.0 * PI / period;
        (img.get(0, y, x) + 12.0 * t.sin()).clamp(0.0, 255.0)
    })
}

/// RGB version of [`synthetic_scene`]: three correlated channels.
pub fn synthetic_rgb_scene(height: usize, width: usize, seed: u64) -> SpatialMap<f64> {
    let luma = synthetic_scene(height, width, seed);
    let tint = synthetic_scene(height, width, seed.wrapping_add(0x9e37_79b9));
    SpatialMap::from_fn(3, height, width, |c, y, x| {
        let l = luma.get(0, y, x);
        let t = tint.get(0, y, x) - 128.0;
        let v = match c {
            0 => l + 0.3 * t,
            1 => l - 0.1 * t,
            _ => l - 0.3 * t,
        };
        v.clamp(0.0, 255.0)
    })
}
