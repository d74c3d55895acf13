use ndarray::{Array1, ArrayView1};

use crate::error::{ensure, CknError, Result};
use crate::optim::precond::Preconditioner;
use crate::scalar::Real;

/// Preconditioned direction projected on the tangent space at `z`:
/// `v = (I - Q z z^T / (z^T Q z)) Q g`, so that `z^T v = 0`.
pub fn tangent_direction<T: Real>(
    z: &ArrayView1<T>,
    grad: &ArrayView1<T>,
    q: &Preconditioner<T>,
) -> Result<Array1<T>> {
    let qm = q.matrix();
    ensure!(
        z.len() == qm.nrows() && grad.len() == z.len(),
        ShapeMismatch,
        "sphere step: z has {} entries, gradient {}, Q is {}x{}",
        z.len(),
        grad.len(),
        qm.nrows(),
        qm.ncols()
    );
    let qz = qm.dot(z);
    let zqz = z.dot(&qz);
    ensure!(zqz > T::zero(), InvalidArgument, "z^T Q z must be positive");
    let qg = qm.dot(grad);
    let coef = z.dot(&qg) / zqz;
    Ok(qg - &(qz * coef))
}

/// One step on the unit sphere: `Proj[z - eta v]`.
pub fn sphere_step<T: Real>(
    z: &ArrayView1<T>,
    grad: &ArrayView1<T>,
    q: &Preconditioner<T>,
    eta: T,
) -> Result<Array1<T>> {
    let v = tangent_direction(z, grad, q)?;
    let moved = z.to_owned() - &(v * eta);
    let norm = moved.dot(&moved).sqrt();
    if !(norm > T::zero()) || !norm.is_finite() {
        return Err(CknError::StepDegenerate);
    }
    Ok(moved / norm)
}
