//! ITU-R BT.601 studio-swing conversion on `[0, 255]` values.

use crate::error::{ensure, Result};
use crate::maps::SpatialMap;
use crate::scalar::Real;

const FORWARD: [[f64; 3]; 3] = [
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
];
const OFFSET: [f64; 3] = [16.0, 128.0, 128.0];

fn inverse() -> [[f64; 3]; 3] {
    let m = nalgebra::Matrix3::from_fn(|i, j| FORWARD[i][j] / 255.0);
    let inv = m.try_inverse().expect("conversion matrix is invertible");
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = inv[(i, j)];
        }
    }
    out
}

fn mix<T: Real>(image: &SpatialMap<T>, m: &[[f64; 3]; 3], pre: [f64; 3], post: [f64; 3]) -> SpatialMap<T> {
    let (_, h, w) = image.shape();
    let mut out = SpatialMap::zeros(3, h, w);
    for p in 0..h * w {
        let src: Vec<f64> = (0..3)
            .map(|c| image.matrix()[[c, p]].to_f64_lossy() - pre[c])
            .collect();
        for c in 0..3 {
            let v = post[c] + m[c][0] * src[0] + m[c][1] * src[1] + m[c][2] * src[2];
            out.matrix_mut()[[c, p]] = T::lit(v);
        }
    }
    out
}

pub fn rgb_to_ycbcr<T: Real>(image: &SpatialMap<T>) -> Result<SpatialMap<T>> {
    ensure!(image.channels() == 3, ShapeMismatch, "expected 3 channels, got {}", image.channels());
    let m = FORWARD.map(|row| row.map(|v| v / 255.0));
    Ok(mix(image, &m, [0.0; 3], OFFSET))
}

pub fn ycbcr_to_rgb<T: Real>(image: &SpatialMap<T>) -> Result<SpatialMap<T>> {
    ensure!(image.channels() == 3, ShapeMismatch, "expected 3 channels, got {}", image.channels());
    Ok(mix(image, &inverse(), OFFSET, [0.0; 3]))
}
