//! Bicubic resampling with the conventions of Matlab's `imresize`:
//! Keys kernel with `a = -0.5`, widened by `1/scale` when shrinking with
//! antialiasing, symmetric boundary extension and normalized weights.

use crate::error::{ensure, Result};
use crate::maps::SpatialMap;
use crate::scalar::Real;

fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// `ceil(n * scale)` that does not round `n * scale = 6.000000001` up.
pub fn scaled_length(n: usize, scale: f64) -> usize {
    let exact = n as f64 * scale;
    let rounded = exact.round();
    if (exact - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        exact.ceil() as usize
    }
}

/// Sparse interpolation weights for one axis: for every output index the
/// contributing input indices and their normalized weights.
fn contributions(in_len: usize, out_len: usize, scale: f64, antialias: bool) -> Vec<Vec<(usize, f64)>> {
    let shrink = scale < 1.0 && antialias;
    let width = if shrink { 4.0 / scale } else { 4.0 };
    let taps = width.ceil() as i64 + 2;
    let period = 2 * in_len as i64;
    (1..=out_len)
        .map(|x| {
            // 1-based continuous coordinate in the input
            let u = x as f64 / scale + 0.5 * (1.0 - 1.0 / scale);
            let left = (u - width / 2.0).floor() as i64;
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(taps as usize);
            let mut total = 0.0;
            for k in 0..taps {
                let idx = left + k;
                let d = u - idx as f64;
                let w = if shrink { scale * cubic(scale * d) } else { cubic(d) };
                if w == 0.0 {
                    continue;
                }
                // symmetric extension of 1..=in_len
                let m = (idx - 1).rem_euclid(period);
                let src = if m < in_len as i64 { m } else { period - 1 - m } as usize;
                total += w;
                match row.iter_mut().find(|(s, _)| *s == src) {
                    Some(entry) => entry.1 += w,
                    None => row.push((src, w)),
                }
            }
            for e in &mut row {
                e.1 /= total;
            }
            row
        })
        .collect()
}

/// Resizes every channel by `scale`; the output is `ceil(H scale) x
/// ceil(W scale)`.
pub fn bicubic_resize<T: Real>(image: &SpatialMap<T>, scale: f64, antialias: bool) -> Result<SpatialMap<T>> {
    ensure!(scale > 0.0 && scale.is_finite(), InvalidArgument, "scale must be positive, got {scale}");
    let out_h = scaled_length(image.height(), scale);
    let out_w = scaled_length(image.width(), scale);
    resize_with(image, out_h, out_w, scale, antialias)
}

/// Same as [`bicubic_resize`] with an explicit output size.
pub fn resize_with<T: Real>(
    image: &SpatialMap<T>,
    out_h: usize,
    out_w: usize,
    scale: f64,
    antialias: bool,
) -> Result<SpatialMap<T>> {
    ensure!(scale > 0.0 && scale.is_finite(), InvalidArgument, "scale must be positive, got {scale}");
    ensure!(out_h > 0 && out_w > 0, InvalidArgument, "empty output size");
    let (c, h, w) = image.shape();
    if out_h == h && out_w == w && scale == 1.0 {
        return Ok(image.clone());
    }
    let rows = contributions(h, out_h, scale, antialias);
    let cols = contributions(w, out_w, scale, antialias);
    let mut out = SpatialMap::zeros(c, out_h, out_w);
    let mut tmp = vec![0.0f64; h * out_w];
    for ch in 0..c {
        for y in 0..h {
            for (x, taps) in cols.iter().enumerate() {
                tmp[y * out_w + x] = taps
                    .iter()
                    .map(|&(s, wt)| wt * image.get(ch, y, s).to_f64_lossy())
                    .sum();
            }
        }
        for (y, taps) in rows.iter().enumerate() {
            for x in 0..out_w {
                let v: f64 = taps.iter().map(|&(s, wt)| wt * tmp[s * out_w + x]).sum();
                out.set(ch, y, x, T::lit(v));
            }
        }
    }
    Ok(out)
}
