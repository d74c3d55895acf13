use ndarray::{Array2, Axis};

use crate::error::{ensure, CknError, Result};
use crate::scalar::Real;

pub const DEFAULT_RIDGE: f64 = 0.01;

/// Regularized inverse covariance of a layer's patches.
#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner<T> {
    q: Array2<T>,
}

impl<T: Real> Preconditioner<T> {
    pub fn identity(dim: usize) -> Self {
        Preconditioner {
            q: Array2::eye(dim),
        }
    }

    /// Wraps a symmetric positive definite matrix.
    pub fn from_matrix(q: Array2<T>) -> Result<Self> {
        ensure!(q.is_square(), ShapeMismatch, "preconditioner must be square");
        let tol = T::lit(1e-8) * q.iter().fold(T::one(), |m, v| m.max(v.abs()));
        for i in 0..q.nrows() {
            for j in 0..i {
                ensure!(
                    (q[[i, j]] - q[[j, i]]).abs() <= tol,
                    InvalidArgument,
                    "preconditioner is not symmetric"
                );
            }
        }
        Ok(Preconditioner { q })
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }
}

/// `Q = (Cov + ridge tr(Cov)/d I)^{-1}` where `Cov` is the empirical
/// covariance of the given columns.
pub fn compute_preconditioner<T: Real>(columns: &Array2<T>, ridge: f64) -> Result<Preconditioner<T>> {
    let (d, n) = columns.dim();
    ensure!(ridge >= 0.0, InvalidArgument, "ridge must be non-negative");
    ensure!(
        n > d,
        Data,
        "need at least {} patch columns for a {d}-dimensional covariance, got {n}",
        d + 1
    );
    let mean = columns.mean_axis(Axis(1)).expect("non-empty");
    let centered = columns - &mean.insert_axis(Axis(1));
    let mut cov = centered.dot(&centered.t()) / T::from_usize_lossy(n - 1);
    let shift = T::lit(ridge) * cov.diag().sum() / T::from_usize_lossy(d);
    cov.diag_mut().mapv_inplace(|v| v + shift);
    cov = (&cov + &cov.t()) * T::lit(0.5);

    let (values, vectors) = T::symmetric_eigen(&cov);
    let top = values[d - 1];
    let floor = top * T::lit(1e-12);
    if !(top > T::zero()) || values[0] <= floor {
        return Err(CknError::SingularMatrix(format!(
            "patch covariance has eigenvalue {:.3e} (largest {:.3e})",
            values[0].to_f64_lossy(),
            top.to_f64_lossy()
        )));
    }
    let mut scaled = vectors.clone();
    for (mut col, &l) in scaled.axis_iter_mut(Axis(1)).zip(values.iter()) {
        col /= l;
    }
    let q = scaled.dot(&vectors.t());
    let q = (&q + &q.t()) * T::lit(0.5);
    Ok(Preconditioner { q })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn isotropic_data_gives_scaled_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Array2::<f64>::from_shape_fn((6, 40_000), |_| StandardNormal.sample(&mut rng));
        let p = compute_preconditioner(&x, 0.01).unwrap();
        let expect = 1.0 / 1.01;
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { expect } else { 0.0 };
                assert!((p.matrix()[[i, j]] - want).abs() < 0.1 * expect);
            }
        }
    }

    #[test]
    fn rank_deficient_without_ridge_is_singular() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = Array2::<f64>::from_shape_fn((4, 100), |_| StandardNormal.sample(&mut rng));
        let copy = x.row(0).to_owned();
        x.row_mut(3).assign(&copy);
        assert!(matches!(
            compute_preconditioner(&x, 0.0),
            Err(CknError::SingularMatrix(_))
        ));
        assert!(compute_preconditioner(&x, 0.01).is_ok());
    }

    #[test]
    fn too_few_columns() {
        let x = Array2::<f64>::ones((4, 4));
        assert!(matches!(compute_preconditioner(&x, 0.01), Err(CknError::Data(_))));
    }

    #[test]
    fn regularized_is_symmetric_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::<f64>::from_shape_fn((9, 50), |_| StandardNormal.sample(&mut rng));
        let p = compute_preconditioner(&x, 0.01).unwrap();
        let q = p.matrix();
        assert!((q - &q.t()).iter().all(|v| v.abs() < 1e-12));
        let (vals, _) = f64::symmetric_eigen(q);
        assert!(vals[0] > 0.0);
    }
}
