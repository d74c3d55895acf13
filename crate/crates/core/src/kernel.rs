//! Dot-product kernel on the sphere and the PSD matrix functions behind the
//! Nystrom whitening `A = (kappa(Z^T Z) + eps I)^{-1/2}`.

use ndarray::{Array1, Array2, Zip};

use crate::error::{ensure, CknError, Result};
use crate::scalar::Real;

/// Eigenvalues below this are clamped before fractional powers.
const EIGEN_FLOOR: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// `kappa(t) = exp(alpha (t - 1))`.
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    alpha: f64,
    kind: KernelKind,
}

impl KernelSpec {
    pub fn rbf(alpha: f64) -> Result<Self> {
        ensure!(
            alpha.is_finite() && alpha > 0.0,
            InvalidArgument,
            "kernel alpha must be positive, got {alpha}"
        );
        Ok(KernelSpec {
            alpha,
            kind: KernelKind::Rbf,
        })
    }

    /// RBF kernel parameterized by a bandwidth: `alpha = 1 / sigma^2`.
    pub fn rbf_sigma(sigma: f64) -> Result<Self> {
        Self::rbf(1.0 / (sigma * sigma))
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::rbf(alpha)
    }

    #[inline]
    pub fn kappa<T: Real>(&self, t: T) -> T {
        match self.kind {
            KernelKind::Rbf => (T::lit(self.alpha) * (t - T::one())).exp(),
        }
    }

    #[inline]
    pub fn kappa_prime<T: Real>(&self, t: T) -> T {
        match self.kind {
            KernelKind::Rbf => T::lit(self.alpha) * self.kappa(t),
        }
    }

    /// Derivative of `kappa(t)` with respect to `alpha`.
    #[inline]
    pub fn kappa_dalpha<T: Real>(&self, t: T) -> T {
        match self.kind {
            KernelKind::Rbf => (t - T::one()) * self.kappa(t),
        }
    }

    pub fn kappa_mat<T: Real>(&self, t: &Array2<T>) -> Array2<T> {
        t.mapv(|v| self.kappa(v))
    }

    pub fn kappa_prime_mat<T: Real>(&self, t: &Array2<T>) -> Array2<T> {
        t.mapv(|v| self.kappa_prime(v))
    }
}

/// `A`, `A^{1/2}` and `A^{3/2}` for `A = (M + eps I)^{-1/2}`, together with
/// the eigen-decomposition of `M + eps I` needed to differentiate `A`.
#[derive(Debug, Clone)]
pub struct WhiteningSet<T> {
    pub a: Array2<T>,
    pub a_half: Array2<T>,
    pub a_threehalf: Array2<T>,
    pub epsilon: f64,
    eigenvalues: Array1<T>,
    eigenvectors: Array2<T>,
}

fn spectral<T: Real>(vectors: &Array2<T>, values: &Array1<T>, f: impl Fn(T) -> T) -> Array2<T> {
    let mut scaled = vectors.clone();
    for (mut col, &l) in scaled.columns_mut().into_iter().zip(values.iter()) {
        col *= f(l);
    }
    scaled.dot(&vectors.t())
}

/// Inverse square root of a symmetric PSD matrix regularized by `epsilon`.
pub fn inv_sqrt_psd<T: Real>(m: &Array2<T>, epsilon: f64) -> Result<WhiteningSet<T>> {
    ensure!(
        m.is_square() && m.nrows() > 0,
        InvalidArgument,
        "expected a non-empty square matrix, got {:?}",
        m.dim()
    );
    ensure!(epsilon >= 0.0, InvalidArgument, "epsilon must be non-negative");
    let asym = Zip::from(m)
        .and(&m.t())
        .fold(0.0f64, |acc, &a, &b| acc.max((a - b).abs().to_f64_lossy()));
    ensure!(
        asym <= SYMMETRY_TOL,
        InvalidArgument,
        "matrix is not symmetric (max asymmetry {asym:.3e})"
    );
    let n = m.nrows();
    let mut sym = (m + &m.t()) * T::lit(0.5);
    let eps = T::lit(epsilon);
    for i in 0..n {
        sym[[i, i]] += eps;
    }
    let (values, vectors) = T::symmetric_eigen(&sym);
    let smallest = values[0];
    if !(smallest > T::zero()) {
        return Err(CknError::SingularMatrix(format!(
            "smallest eigenvalue {:.3e} is not positive",
            smallest.to_f64_lossy()
        )));
    }
    let floor = T::lit(EIGEN_FLOOR);
    let values = values.mapv(|l| l.max(floor));
    let pow = |p: f64| {
        let p = T::lit(p);
        move |l: T| l.powf(p)
    };
    Ok(WhiteningSet {
        a: spectral(&vectors, &values, pow(-0.5)),
        a_half: spectral(&vectors, &values, pow(-0.25)),
        a_threehalf: spectral(&vectors, &values, pow(-0.75)),
        epsilon,
        eigenvalues: values,
        eigenvectors: vectors,
    })
}

impl<T: Real> WhiteningSet<T> {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Eigenvalues of the regularized matrix `M + eps I`, ascending.
    pub fn eigenvalues(&self) -> &Array1<T> {
        &self.eigenvalues
    }

    /// Pulls a cotangent `H` of `A` back to the regularized matrix.
    ///
    /// Returns the symmetric `G` with `<dA, H> = <dM, G>` for every
    /// symmetric perturbation `dM`, using the divided differences of
    /// `l -> l^{-1/2}` in the eigenbasis.
    pub fn pullback(&self, h: &Array2<T>) -> Array2<T> {
        let v = &self.eigenvectors;
        let hs = (h + &h.t()) * T::lit(0.5);
        let mut core = v.t().dot(&hs).dot(v);
        let roots = self.eigenvalues.mapv(|l| l.sqrt());
        for ((i, j), g) in core.indexed_iter_mut() {
            let (si, sj) = (roots[i], roots[j]);
            *g = -*g / (si * sj * (si + sj));
        }
        v.dot(&core).dot(&v.t())
    }

    /// First-order pullback assuming the perturbation commutes with `M`:
    /// `G = -1/2 A^{3/2} H_sym A^{3/2}`.
    pub fn pullback_commuting(&self, h: &Array2<T>) -> Array2<T> {
        let hs = (h + &h.t()) * T::lit(0.5);
        self.a_threehalf.dot(&hs).dot(&self.a_threehalf) * T::lit(-0.5)
    }
}
