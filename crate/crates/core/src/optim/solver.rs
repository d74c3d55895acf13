//! Convex problem in the linear weights with the network frozen:
//! `min_W (1/n) sum_i sum_c L(y_ic, <W_c, x_i>) + (lambda/2) |W|_F^2`.
//!
//! Outputs decouple, so each row of `W` is solved on its own. The default
//! solver is an incremental scheme that keeps one scalar derivative per
//! sample (a MISO-type lower model for linear predictors), wrapped in a
//! Catalyst extrapolation loop when `lambda` is small.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{ensure, CknError, Result};
use crate::grad::{loss_value_grad, LossKind};
use crate::optim::model::LinearModel;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverMethod {
    #[default]
    Incremental,
    GradientDescent,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Stationarity target: `|grad| <= tol max(1, |W|)`.
    pub tol: f64,
    /// Cap on passes over the data, per output.
    pub max_passes: usize,
    pub method: SolverMethod,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-6,
            max_passes: 20_000,
            method: SolverMethod::Incremental,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution<T> {
    pub model: LinearModel<T>,
    pub objective: f64,
    pub grad_norm: f64,
    pub passes: usize,
}

/// Smoothness constant of `t -> L(y, t)`.
fn curvature(loss: LossKind) -> f64 {
    match loss {
        LossKind::SquaredHinge | LossKind::Square => 2.0,
        LossKind::Logistic => 0.25,
    }
}

/// Objective value and gradient norm for one output.
fn evaluate_row<T: Real>(
    x: &ArrayView2<T>,
    y: &ArrayView1<T>,
    w: &Array1<T>,
    loss: LossKind,
    lambda: f64,
) -> (f64, Array1<f64>) {
    let n = x.nrows() as f64;
    let pred = x.dot(w);
    let mut value = 0.0;
    let mut derivs = Array1::<T>::zeros(pred.len());
    for i in 0..pred.len() {
        let (l, d) = loss_value_grad(loss, y[i], pred[i]);
        value += l.to_f64_lossy();
        derivs[i] = d;
    }
    let grad_t = x.t().dot(&derivs);
    let grad: Array1<f64> = grad_t
        .iter()
        .zip(w.iter())
        .map(|(&g, &wv)| g.to_f64_lossy() / n + lambda * wv.to_f64_lossy())
        .collect();
    let wsq: f64 = w.iter().map(|v| v.to_f64_lossy().powi(2)).sum();
    (value / n + 0.5 * lambda * wsq, grad)
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

fn norm_t<T: Real>(v: &Array1<T>) -> f64 {
    v.iter().map(|x| x.to_f64_lossy().powi(2)).sum::<f64>().sqrt()
}

struct RowResult<T> {
    w: Array1<T>,
    grad_norm: f64,
    passes: usize,
    converged: bool,
}

fn solve_row_gd<T: Real>(
    x: &ArrayView2<T>,
    y: &ArrayView1<T>,
    loss: LossKind,
    lambda: f64,
    options: &SolverOptions,
    init: Array1<T>,
) -> RowResult<T> {
    let n = x.nrows() as f64;
    let sq_mean = x.axis_iter(Axis(0)).map(|r| r.dot(&r).to_f64_lossy()).sum::<f64>() / n;
    let smooth = curvature(loss) * sq_mean + lambda;
    let step = 1.0 / smooth.max(f64::MIN_POSITIVE);
    let mut w = init;
    // Nesterov momentum for strongly convex problems
    let q = lambda / smooth;
    let beta = (1.0 - q.sqrt()) / (1.0 + q.sqrt());
    let mut prev = w.clone();
    let mut passes = 0;
    loop {
        let (_, g) = evaluate_row(x, y, &w, loss, lambda);
        let gn = norm(&g);
        if gn <= options.tol * norm_t(&w).max(1.0) {
            return RowResult {
                w,
                grad_norm: gn,
                passes,
                converged: true,
            };
        }
        if passes >= options.max_passes * 10 {
            return RowResult {
                w,
                grad_norm: gn,
                passes,
                converged: false,
            };
        }
        let look = &w + &((&w - &prev) * T::lit(beta));
        let (_, g_look) = evaluate_row(x, y, &look, loss, lambda);
        prev = w;
        w = look - &g_look.mapv(|v| T::lit(step * v));
        passes += 1;
    }
}

/// Incremental solver for `(1/n) sum f_i(<w, x_i>) + (mu/2)|w - c|^2` with
/// `mu = lambda + kappa`, `c = kappa/mu y`. Each sample keeps a scalar
/// `a_i`; `w = c - (1/(mu n)) sum a_i x_i`, and `a_i` moves a damped step
/// towards `f_i'(<w, x_i>)`.
struct Incremental<T> {
    a: Array1<T>,
    sum: Array1<T>,
    sq_norms: Vec<f64>,
    order: Vec<usize>,
}

impl<T: Real> Incremental<T> {
    fn new(x: &ArrayView2<T>) -> Self {
        Incremental {
            a: Array1::zeros(x.nrows()),
            sum: Array1::zeros(x.ncols()),
            sq_norms: x.axis_iter(Axis(0)).map(|r| r.dot(&r).to_f64_lossy()).collect(),
            order: (0..x.nrows()).collect(),
        }
    }

    fn iterate(&self, center: &Array1<T>, mu: f64, n: f64) -> Array1<T> {
        center - &(&self.sum * T::lit(1.0 / (mu * n)))
    }

    #[allow(clippy::too_many_arguments)]
    fn pass(
        &mut self,
        x: &ArrayView2<T>,
        y: &ArrayView1<T>,
        loss: LossKind,
        center: &Array1<T>,
        mu: f64,
        rng: &mut ChaCha8Rng,
    ) -> Array1<T> {
        let n = x.nrows() as f64;
        let lc = curvature(loss);
        self.order.shuffle(rng);
        let mut w = self.iterate(center, mu, n);
        for &i in &self.order {
            let xi = x.row(i);
            let (_, d) = loss_value_grad(loss, y[i], xi.dot(&w));
            let delta = (mu * n / (lc * self.sq_norms[i] + mu * n)).min(1.0);
            let change = (d - self.a[i]) * T::lit(delta);
            if change == T::zero() {
                continue;
            }
            self.a[i] += change;
            self.sum.scaled_add(change, &xi);
            w.scaled_add(-change * T::lit(1.0 / (mu * n)), &xi);
        }
        // recompute from the running sum to limit drift
        self.iterate(center, mu, n)
    }
}

fn solve_row_incremental<T: Real>(
    x: &ArrayView2<T>,
    y: &ArrayView1<T>,
    loss: LossKind,
    lambda: f64,
    options: &SolverOptions,
    rng: &mut ChaCha8Rng,
) -> RowResult<T> {
    let n = x.nrows() as f64;
    let d = x.ncols();
    let sq_mean = x.axis_iter(Axis(0)).map(|r| r.dot(&r).to_f64_lossy()).sum::<f64>() / n;
    let lsmooth = curvature(loss) * sq_mean;
    // extrapolation only pays off when lambda is small relative to L/n
    let kappa = (lsmooth / (n + 1.0) - lambda).max(0.0);
    let mu = lambda + kappa;
    let mut state = Incremental::<T>::new(x);

    let mut xk = Array1::<T>::zeros(d);
    let mut yk = xk.clone();
    let q = lambda / mu;
    let mut alpha = q.sqrt().max(1e-12).min(1.0);
    if kappa == 0.0 {
        alpha = 1.0;
    }
    let mut passes = 0;
    let mut last_grad = f64::INFINITY;
    while passes < options.max_passes {
        let center = &yk * T::lit(kappa / mu);
        let x_prev = xk.clone();
        // inner problem: a few passes, stopping early once well solved
        let inner_cap = if kappa == 0.0 { 1 } else { 5 };
        for _ in 0..inner_cap {
            xk = state.pass(x, y, loss, &center, mu, rng);
            passes += 1;
            if kappa == 0.0 {
                break;
            }
            let (_, g) = evaluate_row(x, y, &xk, loss, lambda);
            let wdiff: Array1<f64> = (&xk - &yk).iter().map(|v| v.to_f64_lossy() * kappa).collect();
            let inner = &g + &wdiff;
            if norm(&inner) <= 0.5 * norm(&g).max(options.tol) {
                break;
            }
        }
        let (_, g) = evaluate_row(x, y, &xk, loss, lambda);
        last_grad = norm(&g);
        if last_grad <= options.tol * norm_t(&xk).max(1.0) {
            return RowResult {
                w: xk,
                grad_norm: last_grad,
                passes,
                converged: true,
            };
        }
        if kappa > 0.0 {
            let a2 = alpha * alpha;
            let next = 0.5 * ((q - a2) + ((q - a2).powi(2) + 4.0 * a2).sqrt());
            let beta = alpha * (1.0 - alpha) / (a2 + next);
            alpha = next;
            yk = &xk + &((&xk - &x_prev) * T::lit(beta));
        } else {
            yk = xk.clone();
        }
    }
    RowResult {
        w: xk,
        grad_norm: last_grad,
        passes,
        converged: false,
    }
}

/// Solves for `W` given per-sample feature rows `features` (`n x d`) and
/// targets (`n x outputs`).
pub fn solve_w_convex<T: Real>(
    features: &ArrayView2<T>,
    targets: &ArrayView2<T>,
    loss: LossKind,
    lambda: f64,
    options: &SolverOptions,
) -> Result<Solution<T>> {
    let (n, d) = features.dim();
    ensure!(n > 0, Data, "no samples");
    ensure!(
        targets.nrows() == n,
        ShapeMismatch,
        "{} targets for {n} samples",
        targets.nrows()
    );
    ensure!(lambda > 0.0, InvalidArgument, "lambda must be positive");
    ensure!(options.tol > 0.0, InvalidArgument, "tolerance must be positive");
    let outputs = targets.ncols();
    let rows: Vec<RowResult<T>> = (0..outputs)
        .into_par_iter()
        .map(|c| {
            let y = targets.column(c);
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed.wrapping_add(c as u64));
            match options.method {
                SolverMethod::Incremental => {
                    solve_row_incremental(features, &y, loss, lambda, options, &mut rng)
                }
                SolverMethod::GradientDescent => {
                    solve_row_gd(features, &y, loss, lambda, options, Array1::zeros(d))
                }
            }
        })
        .collect();

    let mut w = Array2::<T>::zeros((outputs, d));
    let mut grad_sq = 0.0;
    let mut passes = 0;
    let mut converged = true;
    for (c, r) in rows.iter().enumerate() {
        w.row_mut(c).assign(&r.w);
        grad_sq += r.grad_norm * r.grad_norm;
        passes = passes.max(r.passes);
        converged &= r.converged;
    }
    if !converged {
        return Err(CknError::Convergence {
            iterations: passes,
            grad_norm: grad_sq.sqrt(),
            last_iterate: w.iter().map(|v| v.to_f64_lossy()).collect(),
        });
    }
    let objective = objective(features, targets, &w, loss, lambda);
    Ok(Solution {
        model: LinearModel::new(w, lambda)?,
        objective,
        grad_norm: grad_sq.sqrt(),
        passes,
    })
}

/// Full objective of `W` on the given features.
pub fn objective<T: Real>(
    features: &ArrayView2<T>,
    targets: &ArrayView2<T>,
    w: &Array2<T>,
    loss: LossKind,
    lambda: f64,
) -> f64 {
    (0..w.nrows())
        .map(|c| evaluate_row(features, &targets.column(c), &w.row(c).to_owned(), loss, lambda).0)
        .sum()
}

/// Ridge regression in closed form from accumulated normal equations:
/// minimizes `(1/m) sum (t - <w, f>)^2 + (lambda/2)|w|^2` given
/// `gram = (1/m) sum f f^T` and `cross = (1/m) sum t f`.
pub fn ridge_from_moments<T: Real>(gram: &Array2<f64>, cross: &Array1<f64>, lambda: f64) -> Result<Array1<T>> {
    let d = cross.len();
    ensure!(gram.dim() == (d, d), ShapeMismatch, "gram/cross size mismatch");
    let mut sys = gram * 2.0;
    sys.diag_mut().mapv_inplace(|v| v + lambda);
    let a = nalgebra::DMatrix::from_fn(d, d, |i, j| sys[[i, j]]);
    let b = nalgebra::DVector::from_fn(d, |i, _| 2.0 * cross[i]);
    let sol = a
        .cholesky()
        .ok_or_else(|| CknError::SingularMatrix("ridge system is not positive definite".into()))?
        .solve(&b);
    Ok(Array1::from_shape_fn(d, |i| T::lit(sol[i])))
}
