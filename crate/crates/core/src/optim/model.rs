use ndarray::{Array1, Array2};

use crate::error::{ensure, Result};
use crate::maps::SpatialMap;
use crate::scalar::Real;

/// Prediction weights on the final feature map, one row per output, plus
/// the ridge parameter they were fitted with.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T> {
    weights: Array2<T>,
    lambda: f64,
}

impl<T: Real> LinearModel<T> {
    pub fn new(weights: Array2<T>, lambda: f64) -> Result<Self> {
        ensure!(lambda >= 0.0, InvalidArgument, "lambda must be non-negative");
        ensure!(
            weights.iter().all(|v| v.is_finite()),
            InvalidArgument,
            "non-finite weight"
        );
        Ok(LinearModel { weights, lambda })
    }

    pub fn zeros(outputs: usize, dim: usize, lambda: f64) -> Self {
        LinearModel {
            weights: Array2::zeros((outputs, dim)),
            lambda,
        }
    }

    pub fn weights(&self) -> &Array2<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Array2<T> {
        &mut self.weights
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    /// `<W_c, I_k>` for every output `c`.
    pub fn predict(&self, features: &SpatialMap<T>) -> Result<Array1<T>> {
        let flat = flatten(features);
        ensure!(
            flat.len() == self.dim(),
            ShapeMismatch,
            "feature map has {} entries, model expects {}",
            flat.len(),
            self.dim()
        );
        Ok(self.weights.dot(&flat))
    }

    /// Row `c` of `W` reshaped onto the feature grid.
    pub fn row_as_map(&self, c: usize, like: &SpatialMap<T>) -> Result<SpatialMap<T>> {
        let row = self.weights.row(c).to_owned();
        SpatialMap::from_vec(like.channels(), like.height(), like.width(), row.to_vec())
    }

    /// `(lambda / 2) |W|_F^2`.
    pub fn penalty(&self) -> f64 {
        let sq = self.weights.iter().fold(0.0, |a, v| a + v.to_f64_lossy().powi(2));
        0.5 * self.lambda * sq
    }
}

/// Row-major flattening of a feature map (channel-major, then pixels).
pub fn flatten<T: Real>(features: &SpatialMap<T>) -> Array1<T> {
    Array1::from_iter(features.matrix().iter().copied())
}
