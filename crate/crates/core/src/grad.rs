//! Exact backpropagation through the layers.
//!
//! For a cotangent `U` on the output `I_j` of layer `j`, [`layer_backward`]
//! returns the filter gradient `g_j(U)`, the kernel-parameter gradient and
//! the cotangent `h_j(U)` on the layer input. Chaining `h_k, ..., h_{j+1}`
//! and applying `g_j` gives the gradient of any linear functional of the
//! final map, which [`network_backward`] scales by the loss derivative.

use ndarray::{Array1, Array2, Axis, Zip};

use crate::error::{ensure, Result};
use crate::layer::{LayerCache, LayerParams, NetworkParams};
use crate::maps::{combine_patches, SpatialMap};
use crate::optim::model::{flatten, LinearModel};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    SquaredHinge,
    Square,
    Logistic,
}

impl std::str::FromStr for LossKind {
    type Err = crate::error::CknError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared-hinge" | "squared_hinge" => Ok(LossKind::SquaredHinge),
            "square" => Ok(LossKind::Square),
            "logistic" => Ok(LossKind::Logistic),
            other => Err(crate::error::CknError::InvalidArgument(format!(
                "unknown loss '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::SquaredHinge => "squared-hinge",
            LossKind::Square => "square",
            LossKind::Logistic => "logistic",
        })
    }
}

/// Loss value and its derivative with respect to the prediction.
pub fn loss_value_grad<T: Real>(kind: LossKind, y: T, yhat: T) -> (T, T) {
    let one = T::one();
    let two = T::lit(2.0);
    match kind {
        LossKind::SquaredHinge => {
            let slack = (one - y * yhat).max(T::zero());
            (slack * slack, -two * y * slack)
        }
        LossKind::Square => {
            let r = y - yhat;
            (r * r, -two * r)
        }
        LossKind::Logistic => {
            let m = y * yhat;
            // log(1 + e^{-m}) without overflow
            let value = if m > T::zero() {
                (-m).exp().ln_1p()
            } else {
                -m + m.exp().ln_1p()
            };
            (value, -y / (one + m.exp()))
        }
    }
}

/// How the dependence of `A` on the filters is differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WhiteningGradient {
    /// Exact derivative of the inverse square root (divided differences).
    #[default]
    Exact,
    /// First-order form `-1/2 A^{3/2} dK A^{3/2}`; exact only when the
    /// perturbation commutes with `kappa(Z^T Z) + eps I`.
    Commuting,
}

#[derive(Debug, Clone)]
pub struct LayerGradient<T> {
    /// `g_j(U)`, shaped like the filters.
    pub filters: Array2<T>,
    /// Derivative of `<I_j, U>` with respect to `alpha_j`.
    pub alpha: T,
    /// `h_j(U)`, shaped like the layer input; `None` when not requested.
    pub input: Option<SpatialMap<T>>,
}

/// Backward pass of one layer for a cotangent `U` on its output.
pub fn layer_backward<T: Real>(
    layer: &LayerParams<T>,
    cache: &LayerCache<T>,
    u: &Array2<T>,
) -> Result<LayerGradient<T>> {
    layer_backward_with(layer, cache, u, WhiteningGradient::Exact, true)
}

pub fn layer_backward_with<T: Real>(
    layer: &LayerParams<T>,
    cache: &LayerCache<T>,
    u: &Array2<T>,
    mode: WhiteningGradient,
    want_input: bool,
) -> Result<LayerGradient<T>> {
    ensure!(
        u.dim() == cache.output.matrix().dim(),
        ShapeMismatch,
        "cotangent {:?} does not match layer output {:?}",
        u.dim(),
        cache.output.matrix().dim()
    );
    ensure!(
        cache.cosines.nrows() == layer.filters_out() && cache.patches.nrows() == layer.patch_dim(),
        ShapeMismatch,
        "cache was produced by a different layer"
    );
    let kernel = layer.kernel();
    let z = layer.filters();
    let whitening = layer.whitening();

    // U P^T
    let v = match &cache.pool {
        Some(op) => op.apply_adjoint(&u.view()),
        None => u.clone(),
    };
    let av = whitening.a.dot(&v);
    let kap_prime = cache.cosines.mapv(|t| kernel.kappa_prime(t));
    let b = &kap_prime * &av;

    // kappa(Z^T E S^{-1}) S = A^{-1} M
    let mut unwhitened = kernel.kappa_mat(&cache.cosines);
    unwhitened
        .axis_iter_mut(Axis(1))
        .zip(cache.norms.iter())
        .for_each(|(mut col, &s)| col *= s);

    // cotangent of A, pulled back to kappa(Z^T Z) + eps I
    let h = v.dot(&unwhitened.t());
    let g = match mode {
        WhiteningGradient::Exact => whitening.pullback(&h),
        WhiteningGradient::Commuting => whitening.pullback_commuting(&h),
    };
    let gram = z.t().dot(z);
    let r = &gram.mapv(|t| kernel.kappa_prime(t)) * &g;

    let two = T::lit(2.0);
    let dz = cache.patches.dot(&b.t()) + z.dot(&r) * two;

    let mut dalpha = T::zero();
    for ((cos_col, av_col), &s) in cache
        .cosines
        .axis_iter(Axis(1))
        .zip(av.axis_iter(Axis(1)))
        .zip(cache.norms.iter())
    {
        let col_sum = cos_col
            .iter()
            .zip(av_col.iter())
            .fold(T::zero(), |acc, (&t, &a)| acc + kernel.kappa_dalpha(t) * a);
        dalpha += col_sum * s;
    }
    dalpha += Zip::from(&gram)
        .and(&g)
        .fold(T::zero(), |acc, &t, &gv| acc + kernel.kappa_dalpha(t) * gv);

    let input = if want_input {
        let zb = z.dot(&b);
        let mut grad_patches = zb.clone();
        let m = cache.pre_pool.matrix();
        for n in 0..grad_patches.ncols() {
            let raw = cache.raw_norms[n];
            if raw == T::zero() {
                continue;
            }
            let x = cache.patches.column(n);
            let coef = (m.column(n).dot(&v.column(n)) - x.dot(&zb.column(n)))
                / (cache.norms[n] * raw);
            grad_patches
                .column_mut(n)
                .zip_mut_with(&x, |g, &xv| *g += coef * xv);
        }
        Some(combine_patches(
            &grad_patches,
            layer.patch_size(),
            cache.input.shape(),
        )?)
    } else {
        None
    };

    Ok(LayerGradient {
        filters: dz,
        alpha: dalpha,
        input,
    })
}

/// Filter and kernel-parameter gradients of every layer, plus the weight
/// gradient when a linear model is involved.
#[derive(Debug, Clone)]
pub struct GradientSet<T> {
    pub filters: Vec<Array2<T>>,
    pub alpha: Vec<T>,
    pub weights: Option<Array2<T>>,
}

impl<T: Real> GradientSet<T> {
    pub fn zeros_like(net: &NetworkParams<T>) -> Self {
        GradientSet {
            filters: net
                .layers()
                .iter()
                .map(|l| Array2::zeros(l.filters().dim()))
                .collect(),
            alpha: vec![T::zero(); net.depth()],
            weights: None,
        }
    }

    /// In-place `self += other`.
    pub fn accumulate(&mut self, other: &GradientSet<T>) {
        for (a, b) in self.filters.iter_mut().zip(&other.filters) {
            *a += b;
        }
        for (a, b) in self.alpha.iter_mut().zip(&other.alpha) {
            *a += *b;
        }
        match (&mut self.weights, &other.weights) {
            (Some(a), Some(b)) => *a += b,
            (None, Some(b)) => self.weights = Some(b.clone()),
            _ => {}
        }
    }

    pub fn scale(&mut self, factor: T) {
        self.filters.iter_mut().for_each(|f| *f *= factor);
        self.alpha.iter_mut().for_each(|a| *a *= factor);
        if let Some(w) = &mut self.weights {
            *w *= factor;
        }
    }
}

/// Gradients of `<I_k, top>` with respect to every layer's parameters.
pub fn backward_from_top<T: Real>(
    net: &NetworkParams<T>,
    caches: &[LayerCache<T>],
    top: &Array2<T>,
    mode: WhiteningGradient,
) -> Result<GradientSet<T>> {
    ensure!(
        caches.len() == net.depth(),
        InvalidArgument,
        "{} caches for a {}-layer network (forward in training mode)",
        caches.len(),
        net.depth()
    );
    let mut out = GradientSet::zeros_like(net);
    let mut u = top.clone();
    for j in (0..net.depth()).rev() {
        let g = layer_backward_with(&net.layers()[j], &caches[j], &u, mode, j > 0)?;
        out.filters[j] = g.filters;
        out.alpha[j] = g.alpha;
        if let Some(prev) = g.input {
            u = prev.into_matrix();
        }
    }
    Ok(out)
}

/// Gradient of `sum_c L(y_c, <W_c, I_k>)` for one sample.
///
/// All outputs share the filters, so the top cotangent is
/// `sum_c L'(y_c, yhat_c) W_c`, propagated once.
pub fn network_backward<T: Real>(
    net: &NetworkParams<T>,
    caches: &[LayerCache<T>],
    model: &LinearModel<T>,
    loss: LossKind,
    targets: &[T],
    predictions: &[T],
) -> Result<GradientSet<T>> {
    ensure!(
        targets.len() == model.outputs() && predictions.len() == model.outputs(),
        ShapeMismatch,
        "expected {} targets and predictions",
        model.outputs()
    );
    let last = caches
        .last()
        .map(|c| c.output.clone())
        .ok_or_else(|| crate::error::CknError::InvalidArgument("no layer caches".into()))?;
    let derivs: Vec<T> = targets
        .iter()
        .zip(predictions)
        .map(|(&y, &yh)| loss_value_grad(loss, y, yh).1)
        .collect();
    let top = weighted_rows(model, &derivs, &last)?;
    let mut grads = if derivs.iter().all(|d| *d == T::zero()) {
        GradientSet::zeros_like(net)
    } else {
        backward_from_top(net, caches, &top, WhiteningGradient::Exact)?
    };
    let feat = flatten(&last);
    let mut dw = Array2::<T>::zeros(model.weights().dim());
    for (c, &d) in derivs.iter().enumerate() {
        dw.row_mut(c).assign(&(&feat * d));
    }
    grads.weights = Some(dw);
    Ok(grads)
}

/// `sum_c coef_c W_c`, reshaped onto the final grid.
pub fn weighted_rows<T: Real>(
    model: &LinearModel<T>,
    coefs: &[T],
    like: &SpatialMap<T>,
) -> Result<Array2<T>> {
    let (p, n) = like.matrix().dim();
    ensure!(
        model.dim() == p * n,
        ShapeMismatch,
        "model dimension {} != feature size {}",
        model.dim(),
        p * n
    );
    let coef = Array1::from_vec(coefs.to_vec());
    let combined = model.weights().t().dot(&coef);
    Ok(combined
        .into_shape_with_order((p, n))
        .expect("contiguous reshape"))
}

/// Per-layer derivative of the loss with respect to `alpha_j`.
pub fn alpha_gradient<T: Real>(
    net: &NetworkParams<T>,
    caches: &[LayerCache<T>],
    model: &LinearModel<T>,
    loss: LossKind,
    targets: &[T],
    predictions: &[T],
) -> Result<Vec<T>> {
    network_backward(net, caches, model, loss, targets, predictions).map(|g| g.alpha)
}
