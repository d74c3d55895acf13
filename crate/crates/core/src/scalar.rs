//! Scalar abstraction shared by every numeric module.
//!
//! All kernels, layers and solvers are written against [`Real`], which is
//! implemented for `f32` and `f64`. Gradient checks run in `f64`; large
//! training runs usually use `f32`.

use ndarray::{Array1, Array2, NdFloat};
use num_traits::FromPrimitive;

/// Floating point type usable by the network code.
pub trait Real: NdFloat + FromPrimitive + Default + Send + Sync + 'static {
    /// Machine-precision name, used in summaries and checkpoints.
    const NAME: &'static str;

    /// Eigen-decomposition of a symmetric matrix.
    ///
    /// Returns eigenvalues in ascending order and the matching orthonormal
    /// eigenvectors as columns.
    fn symmetric_eigen(m: &Array2<Self>) -> (Array1<Self>, Array2<Self>);

    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("representable literal")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("representable count")
    }
}

fn eigen_via_nalgebra<T>(m: &Array2<T>) -> (Array1<T>, Array2<T>)
where
    T: nalgebra::RealField + Copy,
{
    let n = m.nrows();
    let dm = nalgebra::DMatrix::<T>::from_fn(n, n, |i, j| m[[i, j]]);
    let eig = nalgebra::SymmetricEigen::new(dm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = Array1::from_shape_fn(n, |k| eig.eigenvalues[order[k]]);
    let vectors = Array2::from_shape_fn((n, n), |(i, k)| eig.eigenvectors[(i, order[k])]);
    (values, vectors)
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    fn symmetric_eigen(m: &Array2<Self>) -> (Array1<Self>, Array2<Self>) {
        eigen_via_nalgebra(m)
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    fn symmetric_eigen(m: &Array2<Self>) -> (Array1<Self>, Array2<Self>) {
        eigen_via_nalgebra(m)
    }
}
