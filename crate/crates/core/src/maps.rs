//! Dense feature maps and the linear operators acting on them.
//!
//! A [`SpatialMap`] stores a `channels x (height * width)` matrix, one row
//! per channel and pixels in row-major order. Patch extraction, its adjoint,
//! and Gaussian pooling with its adjoint all act on that layout.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{ensure, CknError, Result};
use crate::scalar::Real;

/// Offset added to every patch norm in the map-level forward pass.
pub const NORM_OFFSET: f64 = 1e-5;

/// A `p`-channel map on a rectangular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMap<T> {
    data: Array2<T>,
    height: usize,
    width: usize,
}

impl<T: Real> SpatialMap<T> {
    pub fn new(data: Array2<T>, height: usize, width: usize) -> Result<Self> {
        ensure!(
            data.nrows() > 0 && height > 0 && width > 0,
            InvalidArgument,
            "empty map ({} channels, {height}x{width})",
            data.nrows()
        );
        ensure!(
            data.ncols() == height * width,
            ShapeMismatch,
            "map data has {} columns, grid is {height}x{width}",
            data.ncols()
        );
        Ok(SpatialMap {
            data,
            height,
            width,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        SpatialMap {
            data: Array2::zeros((channels, height * width)),
            height,
            width,
        }
    }

    /// Builds a map from channel-major, row-major-spatial values.
    pub fn from_vec(channels: usize, height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        ensure!(
            values.len() == channels * height * width,
            ShapeMismatch,
            "expected {} values, got {}",
            channels * height * width,
            values.len()
        );
        let data = Array2::from_shape_vec((channels, height * width), values)
            .map_err(|e| CknError::ShapeMismatch(e.to_string()))?;
        Self::new(data, height, width)
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let data = Array2::from_shape_fn((channels, height * width), |(c, z)| {
            f(c, z / width, z % width)
        });
        SpatialMap {
            data,
            height,
            width,
        }
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels(), self.height, self.width)
    }

    /// The map seen as a `channels x pixels` matrix.
    pub fn matrix(&self) -> &Array2<T> {
        &self.data
    }

    pub fn matrix_mut(&mut self) -> &mut Array2<T> {
        &mut self.data
    }

    pub fn into_matrix(self) -> Array2<T> {
        self.data
    }

    pub fn get(&self, channel: usize, y: usize, x: usize) -> T {
        self.data[[channel, y * self.width + x]]
    }

    pub fn set(&mut self, channel: usize, y: usize, x: usize, v: T) {
        self.data[[channel, y * self.width + x]] = v;
    }

    /// Single channel as a new one-channel map.
    pub fn channel(&self, c: usize) -> SpatialMap<T> {
        let row = self.data.row(c).to_owned().insert_axis(Axis(0));
        SpatialMap {
            data: row,
            height: self.height,
            width: self.width,
        }
    }

    /// Frobenius inner product with a map of the same shape.
    pub fn dot(&self, other: &SpatialMap<T>) -> T {
        debug_assert_eq!(self.shape(), other.shape());
        frobenius(&self.data.view(), &other.data.view())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map_values(&self, f: impl Fn(T) -> T) -> SpatialMap<T> {
        SpatialMap {
            data: self.data.mapv(f),
            height: self.height,
            width: self.width,
        }
    }

    /// Converts to another precision.
    pub fn cast<U: Real>(&self) -> SpatialMap<U> {
        SpatialMap {
            data: self.data.mapv(|v| U::lit(v.to_f64_lossy())),
            height: self.height,
            width: self.width,
        }
    }
}

pub(crate) fn frobenius<T: Real>(a: &ArrayView2<T>, b: &ArrayView2<T>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// All overlapping patches of a map, one column per source pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix<T> {
    data: Array2<T>,
    patch_size: usize,
    channels: usize,
    height: usize,
    width: usize,
}

impl<T: Real> PatchMatrix<T> {
    /// Wraps an arbitrary set of patch columns (e.g. a sampled database).
    /// The grid is recorded as a single row of `columns` pixels.
    pub fn from_columns(data: Array2<T>, patch_size: usize, channels: usize) -> Result<Self> {
        ensure!(
            data.nrows() == channels * patch_size * patch_size,
            ShapeMismatch,
            "patch rows {} != {channels}*{patch_size}^2",
            data.nrows()
        );
        let width = data.ncols();
        Ok(PatchMatrix {
            data,
            patch_size,
            channels,
            height: 1,
            width,
        })
    }

    pub fn patch_dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn columns(&self) -> usize {
        self.data.ncols()
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Grid of the source map, `(height, width)`.
    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.data
    }

    pub fn into_matrix(self) -> Array2<T> {
        self.data
    }
}

fn check_patch_size(patch_size: usize, height: usize, width: usize) -> Result<()> {
    ensure!(
        patch_size >= 1 && patch_size % 2 == 1,
        InvalidArgument,
        "patch size must be odd and positive, got {patch_size}"
    );
    ensure!(
        patch_size <= 2 * height.min(width) + 1,
        InvalidArgument,
        "patch size {patch_size} too large for a {height}x{width} map"
    );
    Ok(())
}

/// Visits every (row, dst_pixel, src_pixel) triple of the zero-padded patch
/// extraction. Rows are ordered channel-major, then row-major in the window.
fn for_each_patch_entry(
    channels: usize,
    height: usize,
    width: usize,
    patch_size: usize,
    mut f: impl FnMut(usize, usize, usize, usize),
) {
    let r = (patch_size / 2) as isize;
    let (h, w) = (height as isize, width as isize);
    for c in 0..channels {
        for dy in 0..patch_size {
            for dx in 0..patch_size {
                let row = (c * patch_size + dy) * patch_size + dx;
                let oy = dy as isize - r;
                let ox = dx as isize - r;
                let y0 = (-oy).max(0);
                let y1 = (h - oy).min(h);
                let x0 = (-ox).max(0);
                let x1 = (w - ox).min(w);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let dst = (y * w + x) as usize;
                        let src = ((y + oy) * w + (x + ox)) as usize;
                        f(c, row, dst, src);
                    }
                }
            }
        }
    }
}

/// Extracts every centered `patch_size x patch_size` patch, zero-padding at
/// the borders.
pub fn extract_patches<T: Real>(map: &SpatialMap<T>, patch_size: usize) -> Result<PatchMatrix<T>> {
    let (channels, height, width) = map.shape();
    check_patch_size(patch_size, height, width)?;
    let dim = channels * patch_size * patch_size;
    let mut out = Array2::<T>::zeros((dim, height * width));
    let src = map.matrix();
    for_each_patch_entry(channels, height, width, patch_size, |c, row, dst, s| {
        out[[row, dst]] = src[[c, s]];
    });
    Ok(PatchMatrix {
        data: out,
        patch_size,
        channels,
        height,
        width,
    })
}

/// Adjoint of [`extract_patches`]: every patch entry is added back to the
/// pixel it was read from.
pub fn combine_patches<T: Real>(
    patches: &Array2<T>,
    patch_size: usize,
    out_shape: (usize, usize, usize),
) -> Result<SpatialMap<T>> {
    let (channels, height, width) = out_shape;
    check_patch_size(patch_size, height, width)?;
    ensure!(
        patches.nrows() == channels * patch_size * patch_size && patches.ncols() == height * width,
        ShapeMismatch,
        "patch matrix {}x{} does not fit {channels}x{height}x{width} with e={patch_size}",
        patches.nrows(),
        patches.ncols()
    );
    let mut out = Array2::<T>::zeros((channels, height * width));
    for_each_patch_entry(channels, height, width, patch_size, |c, row, dst, s| {
        out[[c, s]] += patches[[row, dst]];
    });
    SpatialMap::new(out, height, width)
}

/// `l2` norm of every column plus [`NORM_OFFSET`].
pub fn column_norms<T: Real>(patches: &Array2<T>) -> Array1<T> {
    let offset = T::lit(NORM_OFFSET);
    patches
        .axis_iter(Axis(1))
        .map(|col| col.dot(&col).sqrt() + offset)
        .collect()
}

/// Pooling geometry of one layer, independent of the input size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolSpec {
    pub subsampling: f64,
    pub beta: f64,
    pub truncation_radius: f64,
    pub normalize: bool,
}

impl PoolSpec {
    /// Gaussian anti-aliasing matched to the subsampling factor:
    /// `sigma = s`, `beta = 1 / (2 sigma^2)`, truncated at `2 sigma`.
    pub fn from_subsampling(subsampling: f64) -> Result<Self> {
        ensure!(
            subsampling.is_finite() && subsampling > 0.0,
            InvalidArgument,
            "subsampling must be positive, got {subsampling}"
        );
        let sigma = subsampling;
        Ok(PoolSpec {
            subsampling,
            beta: 1.0 / (2.0 * sigma * sigma),
            truncation_radius: 2.0 * sigma,
            normalize: false,
        })
    }

    pub fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        (
            ceil_div(height, self.subsampling),
            ceil_div(width, self.subsampling),
        )
    }

    pub fn operator<T: Real>(&self, in_height: usize, in_width: usize) -> Result<PoolOperator<T>> {
        PoolOperator::new(*self, in_height, in_width)
    }
}

fn ceil_div(n: usize, s: f64) -> usize {
    let q = n as f64 / s;
    // Guard against 9/3 = 3.0000000000000004.
    let r = q.round();
    if (q - r).abs() < 1e-9 {
        r as usize
    } else {
        q.ceil() as usize
    }
}

/// Truncated Gaussian pooling matrix, stored sparsely by output pixel.
#[derive(Debug, Clone)]
pub struct PoolOperator<T> {
    spec: PoolSpec,
    in_height: usize,
    in_width: usize,
    out_height: usize,
    out_width: usize,
    offsets: Vec<usize>,
    inputs: Vec<usize>,
    weights: Vec<T>,
}

impl<T: Real> PoolOperator<T> {
    pub fn new(spec: PoolSpec, in_height: usize, in_width: usize) -> Result<Self> {
        ensure!(
            spec.beta > 0.0 && spec.truncation_radius > 0.0 && spec.subsampling > 0.0,
            InvalidArgument,
            "pooling parameters must be positive: {spec:?}"
        );
        ensure!(
            in_height > 0 && in_width > 0,
            InvalidArgument,
            "empty pooling input"
        );
        let (out_height, out_width) = spec.output_size(in_height, in_width);
        let r = spec.truncation_radius;
        let s = spec.subsampling;
        let mut offsets = Vec::with_capacity(out_height * out_width + 1);
        let mut inputs = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for i in 0..out_height {
            let cy = i as f64 * s;
            let y0 = (cy - r).ceil().max(0.0) as usize;
            let y1 = ((cy + r).floor() as isize).min(in_height as isize - 1);
            for k in 0..out_width {
                let cx = k as f64 * s;
                let x0 = (cx - r).ceil().max(0.0) as usize;
                let x1 = ((cx + r).floor() as isize).min(in_width as isize - 1);
                let start = weights.len();
                for y in y0 as isize..=y1 {
                    for x in x0 as isize..=x1 {
                        let dy = y as f64 - cy;
                        let dx = x as f64 - cx;
                        let d2 = dy * dy + dx * dx;
                        if d2 <= r * r {
                            inputs.push(y as usize * in_width + x as usize);
                            weights.push((-spec.beta * d2).exp());
                        }
                    }
                }
                if spec.normalize {
                    let total: f64 = weights[start..].iter().sum();
                    if total > 0.0 {
                        weights[start..].iter_mut().for_each(|w| *w /= total);
                    }
                }
                offsets.push(weights.len());
            }
        }
        Ok(PoolOperator {
            spec,
            in_height,
            in_width,
            out_height,
            out_width,
            offsets,
            inputs,
            weights: weights.into_iter().map(T::lit).collect(),
        })
    }

    pub fn spec(&self) -> &PoolSpec {
        &self.spec
    }

    pub fn input_size(&self) -> (usize, usize) {
        (self.in_height, self.in_width)
    }

    pub fn output_size(&self) -> (usize, usize) {
        (self.out_height, self.out_width)
    }

    /// Weight between input pixel `src` and output pixel `dst`.
    pub fn weight(&self, src: usize, dst: usize) -> T {
        let range = self.offsets[dst]..self.offsets[dst + 1];
        self.inputs[range.clone()]
            .iter()
            .zip(&self.weights[range])
            .find(|(&i, _)| i == src)
            .map(|(_, &w)| w)
            .unwrap_or_else(T::zero)
    }

    /// `M P`: pools every channel of `m` onto the output grid.
    pub fn apply(&self, m: &ArrayView2<T>) -> Array2<T> {
        let mut out = Array2::<T>::zeros((m.nrows(), self.out_height * self.out_width));
        for (src_row, mut dst_row) in m.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
            for o in 0..self.offsets.len() - 1 {
                let mut acc = T::zero();
                for k in self.offsets[o]..self.offsets[o + 1] {
                    acc += self.weights[k] * src_row[self.inputs[k]];
                }
                dst_row[o] = acc;
            }
        }
        out
    }

    /// `U P^T`: spreads every output pixel back onto the input grid.
    pub fn apply_adjoint(&self, u: &ArrayView2<T>) -> Array2<T> {
        let mut out = Array2::<T>::zeros((u.nrows(), self.in_height * self.in_width));
        for (src_row, mut dst_row) in u.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
            for o in 0..self.offsets.len() - 1 {
                let v = src_row[o];
                for k in self.offsets[o]..self.offsets[o + 1] {
                    dst_row[self.inputs[k]] += self.weights[k] * v;
                }
            }
        }
        out
    }
}

pub fn pool_forward<T: Real>(map: &SpatialMap<T>, op: &PoolOperator<T>) -> Result<SpatialMap<T>> {
    ensure!(
        (map.height(), map.width()) == op.input_size(),
        ShapeMismatch,
        "map grid {}x{} does not match pooling input {:?}",
        map.height(),
        map.width(),
        op.input_size()
    );
    let (h, w) = op.output_size();
    SpatialMap::new(op.apply(&map.matrix().view()), h, w)
}

pub fn pool_adjoint<T: Real>(map: &SpatialMap<T>, op: &PoolOperator<T>) -> Result<SpatialMap<T>> {
    ensure!(
        (map.height(), map.width()) == op.output_size(),
        ShapeMismatch,
        "map grid {}x{} does not match pooling output {:?}",
        map.height(),
        map.width(),
        op.output_size()
    );
    let (h, w) = op.input_size();
    SpatialMap::new(op.apply_adjoint(&map.matrix().view()), h, w)
}
