//! Layer parameterization, forward pass and multilayer stacking.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Result};
use crate::kernel::{inv_sqrt_psd, KernelSpec, WhiteningSet};
use crate::maps::{extract_patches, PoolOperator, PoolSpec, SpatialMap, NORM_OFFSET};
use crate::scalar::Real;

/// Default regularization of the Nystrom whitening.
pub const DEFAULT_EPSILON: f64 = 1e-3;
/// Default kernel parameter, `1 / 0.5^2`.
pub const DEFAULT_ALPHA: f64 = 4.0;

const UNIT_TOL: f64 = 1e-6;

/// Architecture of one layer, before any filter is learned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerConfig {
    pub patch_size: usize,
    pub filters: usize,
    /// Pooling factor; `1.0` disables pooling.
    pub subsampling: f64,
    pub alpha: f64,
    pub epsilon: f64,
}

impl LayerConfig {
    pub fn new(patch_size: usize, filters: usize, subsampling: f64) -> Self {
        LayerConfig {
            patch_size,
            filters,
            subsampling,
            alpha: DEFAULT_ALPHA,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn pool_spec(&self) -> Result<Option<PoolSpec>> {
        if self.subsampling == 1.0 {
            Ok(None)
        } else {
            PoolSpec::from_subsampling(self.subsampling).map(Some)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub layers: Vec<LayerConfig>,
}

/// Filters, kernel and cached whitening of one layer.
#[derive(Debug, Clone)]
pub struct LayerParams<T> {
    filters: Array2<T>,
    kernel: KernelSpec,
    patch_size: usize,
    in_channels: usize,
    pool: Option<PoolSpec>,
    epsilon: f64,
    whitening: WhiteningSet<T>,
}

fn check_unit_columns<T: Real>(z: &Array2<T>) -> Result<()> {
    for (j, col) in z.columns().into_iter().enumerate() {
        let n = col.dot(&col).sqrt().to_f64_lossy();
        ensure!(
            (n - 1.0).abs() <= UNIT_TOL,
            InvalidArgument,
            "filter {j} has norm {n}, expected 1"
        );
    }
    Ok(())
}

pub(crate) fn normalize_columns<T: Real>(z: &mut Array2<T>) {
    for mut col in z.columns_mut() {
        let n = col.dot(&col).sqrt();
        if n > T::zero() {
            col /= n;
        }
    }
}

impl<T: Real> LayerParams<T> {
    pub fn new(
        filters: Array2<T>,
        kernel: KernelSpec,
        patch_size: usize,
        in_channels: usize,
        pool: Option<PoolSpec>,
        epsilon: f64,
    ) -> Result<Self> {
        check_unit_columns(&filters)?;
        Self::with_raw_filters(filters, kernel, patch_size, in_channels, pool, epsilon)
    }

    /// Same as [`LayerParams::new`] without the unit-norm check. Used to
    /// evaluate the network at perturbed filters.
    pub fn with_raw_filters(
        filters: Array2<T>,
        kernel: KernelSpec,
        patch_size: usize,
        in_channels: usize,
        pool: Option<PoolSpec>,
        epsilon: f64,
    ) -> Result<Self> {
        ensure!(
            filters.ncols() > 0,
            InvalidArgument,
            "a layer needs at least one filter"
        );
        ensure!(
            patch_size % 2 == 1,
            InvalidArgument,
            "patch size must be odd, got {patch_size}"
        );
        ensure!(
            filters.nrows() == in_channels * patch_size * patch_size,
            ShapeMismatch,
            "filters have {} rows, expected {in_channels}*{patch_size}^2",
            filters.nrows()
        );
        ensure!(filters.iter().all(|v| v.is_finite()), InvalidArgument, "non-finite filter entry");
        let whitening = build_whitening(&filters, &kernel, epsilon)?;
        Ok(LayerParams {
            filters,
            kernel,
            patch_size,
            in_channels,
            pool,
            epsilon,
            whitening,
        })
    }

    pub fn from_config(config: &LayerConfig, in_channels: usize, filters: Array2<T>) -> Result<Self> {
        Self::new(
            filters,
            KernelSpec::rbf(config.alpha)?,
            config.patch_size,
            in_channels,
            config.pool_spec()?,
            config.epsilon,
        )
    }

    pub fn filters(&self) -> &Array2<T> {
        &self.filters
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn patch_dim(&self) -> usize {
        self.filters.nrows()
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn filters_out(&self) -> usize {
        self.filters.ncols()
    }

    pub fn pool(&self) -> Option<&PoolSpec> {
        self.pool.as_ref()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn whitening(&self) -> &WhiteningSet<T> {
        &self.whitening
    }

    /// Replaces the filters (unit columns required) and rebuilds `A`.
    pub fn set_filters(&mut self, filters: Array2<T>) -> Result<()> {
        check_unit_columns(&filters)?;
        ensure!(
            filters.dim() == self.filters.dim(),
            ShapeMismatch,
            "filter shape {:?} != {:?}",
            filters.dim(),
            self.filters.dim()
        );
        self.whitening = build_whitening(&filters, &self.kernel, self.epsilon)?;
        self.filters = filters;
        Ok(())
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        let kernel = self.kernel.with_alpha(alpha)?;
        self.whitening = build_whitening(&self.filters, &kernel, self.epsilon)?;
        self.kernel = kernel;
        Ok(())
    }

    /// Grid of the layer output for an input grid.
    pub fn output_grid(&self, height: usize, width: usize) -> (usize, usize) {
        match &self.pool {
            Some(p) => p.output_size(height, width),
            None => (height, width),
        }
    }

    pub fn cast<U: Real>(&self) -> Result<LayerParams<U>> {
        LayerParams::with_raw_filters(
            self.filters.mapv(|v| U::lit(v.to_f64_lossy())),
            self.kernel,
            self.patch_size,
            self.in_channels,
            self.pool,
            self.epsilon,
        )
    }
}

fn build_whitening<T: Real>(z: &Array2<T>, kernel: &KernelSpec, epsilon: f64) -> Result<WhiteningSet<T>> {
    let gram = z.t().dot(z);
    inv_sqrt_psd(&kernel.kappa_mat(&gram), epsilon)
}

/// Encoding of a single patch: `|x| A kappa(Z^T x / |x|)`, and `0` for `x = 0`.
pub fn encode_patch<T: Real>(layer: &LayerParams<T>, x: &Array1<T>) -> Result<Array1<T>> {
    ensure!(
        x.len() == layer.patch_dim(),
        ShapeMismatch,
        "patch has {} entries, layer expects {}",
        x.len(),
        layer.patch_dim()
    );
    let norm = x.dot(x).sqrt();
    if norm == T::zero() {
        return Ok(Array1::zeros(layer.filters_out()));
    }
    let k = layer
        .filters
        .t()
        .dot(x)
        .mapv(|t| layer.kernel.kappa(t / norm));
    Ok(layer.whitening.a.dot(&k) * norm)
}

/// Forward intermediates of one layer kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache<T> {
    /// `I_{j-1}`.
    pub input: SpatialMap<T>,
    /// `E_j(I_{j-1})`.
    pub patches: Array2<T>,
    /// Plain column norms `|x|`.
    pub raw_norms: Array1<T>,
    /// Offset norms `S_j = |x| + 1e-5`.
    pub norms: Array1<T>,
    /// `Z^T E S^{-1}`.
    pub cosines: Array2<T>,
    /// `M_j`, the map before pooling.
    pub pre_pool: SpatialMap<T>,
    /// `I_j`.
    pub output: SpatialMap<T>,
    pub pool: Option<PoolOperator<T>>,
}

/// One layer: patch extraction, normalization, `kappa`, whitening,
/// rescaling, then pooling when configured.
pub fn layer_forward<T: Real>(
    layer: &LayerParams<T>,
    input: &SpatialMap<T>,
) -> Result<(SpatialMap<T>, LayerCache<T>)> {
    ensure!(
        input.channels() == layer.in_channels,
        ShapeMismatch,
        "layer expects {} input channels, got {}",
        layer.in_channels,
        input.channels()
    );
    let (h, w) = (input.height(), input.width());
    let patches = extract_patches(input, layer.patch_size)?.into_matrix();
    let raw_norms: Array1<T> = patches
        .axis_iter(Axis(1))
        .map(|c| c.dot(&c).sqrt())
        .collect();
    let offset = T::lit(NORM_OFFSET);
    let norms = raw_norms.mapv(|n| n + offset);

    let mut cosines = layer.filters.t().dot(&patches);
    cosines
        .axis_iter_mut(Axis(1))
        .zip(norms.iter())
        .for_each(|(mut col, &s)| col /= s);
    let kap = layer.kernel.kappa_mat(&cosines);
    let mut m = layer.whitening.a.dot(&kap);
    m.axis_iter_mut(Axis(1))
        .zip(norms.iter())
        .for_each(|(mut col, &s)| col *= s);
    let pre_pool = SpatialMap::new(m, h, w)?;

    let (output, pool) = match &layer.pool {
        Some(spec) => {
            let op = spec.operator::<T>(h, w)?;
            let (oh, ow) = op.output_size();
            let pooled = SpatialMap::new(op.apply(&pre_pool.matrix().view()), oh, ow)?;
            (pooled, Some(op))
        }
        None => (pre_pool.clone(), None),
    };
    let cache = LayerCache {
        input: input.clone(),
        patches,
        raw_norms,
        norms,
        cosines,
        pre_pool,
        output: output.clone(),
        pool,
    };
    Ok((output, cache))
}

/// Same result as [`layer_forward`] without keeping intermediates.
pub fn layer_apply<T: Real>(layer: &LayerParams<T>, input: &SpatialMap<T>) -> Result<SpatialMap<T>> {
    layer_forward(layer, input).map(|(out, _)| out)
}

/// Ordered stack of layers.
#[derive(Debug, Clone)]
pub struct NetworkParams<T> {
    input_channels: usize,
    layers: Vec<LayerParams<T>>,
}

impl<T: Real> NetworkParams<T> {
    pub fn new(input_channels: usize, layers: Vec<LayerParams<T>>) -> Result<Self> {
        ensure!(input_channels > 0, InvalidArgument, "network needs input channels");
        let mut channels = input_channels;
        for (j, layer) in layers.iter().enumerate() {
            ensure!(
                layer.in_channels() == channels,
                ShapeMismatch,
                "layer {j} expects {} channels, previous layer produces {channels}",
                layer.in_channels()
            );
            channels = layer.filters_out();
        }
        Ok(NetworkParams {
            input_channels,
            layers,
        })
    }

    /// Random unit filters, mostly for tests and benchmarks.
    pub fn random(config: &NetworkConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut channels = config.input_channels;
        let mut layers = Vec::with_capacity(config.layers.len());
        for lc in &config.layers {
            let dim = channels * lc.patch_size * lc.patch_size;
            let mut z = Array2::from_shape_fn((dim, lc.filters), |_| {
                T::lit(rng.sample::<f64, _>(StandardNormal))
            });
            normalize_columns(&mut z);
            layers.push(LayerParams::from_config(lc, channels, z)?);
            channels = lc.filters;
        }
        Self::new(config.input_channels, layers)
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn output_channels(&self) -> usize {
        self.layers
            .last()
            .map(|l| l.filters_out())
            .unwrap_or(self.input_channels)
    }

    /// Final grid for a given input grid.
    pub fn output_grid(&self, height: usize, width: usize) -> (usize, usize) {
        self.layers
            .iter()
            .fold((height, width), |(h, w), l| l.output_grid(h, w))
    }

    pub(crate) fn push_layer(&mut self, layer: LayerParams<T>) -> Result<()> {
        ensure!(
            layer.in_channels() == self.output_channels(),
            ShapeMismatch,
            "layer expects {} channels, network produces {}",
            layer.in_channels(),
            self.output_channels()
        );
        self.layers.push(layer);
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Result<NetworkParams<U>> {
        let layers = self.layers.iter().map(|l| l.cast()).collect::<Result<Vec<_>>>()?;
        NetworkParams::new(self.input_channels, layers)
    }
}

/// Runs every layer; caches are returned only when `keep_caches` is set.
pub fn network_forward<T: Real>(
    net: &NetworkParams<T>,
    image: &SpatialMap<T>,
    keep_caches: bool,
) -> Result<(SpatialMap<T>, Vec<LayerCache<T>>)> {
    ensure!(
        image.channels() == net.input_channels,
        ShapeMismatch,
        "network expects {} channels, image has {}",
        net.input_channels,
        image.channels()
    );
    let mut caches = Vec::with_capacity(if keep_caches { net.depth() } else { 0 });
    let mut current = image.clone();
    for layer in &net.layers {
        let (out, cache) = layer_forward(layer, &current)?;
        if keep_caches {
            caches.push(cache);
        }
        current = out;
    }
    Ok((current, caches))
}

pub fn network_apply<T: Real>(net: &NetworkParams<T>, image: &SpatialMap<T>) -> Result<SpatialMap<T>> {
    network_forward(net, image, false).map(|(m, _)| m)
}

/// `K(a, b) = sum_z <I_k(z), I'_k(z)>`.
pub fn network_kernel<T: Real>(
    net: &NetworkParams<T>,
    image_a: &SpatialMap<T>,
    image_b: &SpatialMap<T>,
) -> Result<T> {
    let fa = network_apply(net, image_a)?;
    let fb = network_apply(net, image_b)?;
    ensure!(
        fa.shape() == fb.shape(),
        ShapeMismatch,
        "images map to different grids {:?} / {:?}",
        fa.shape(),
        fb.shape()
    );
    Ok(fa.dot(&fb))
}
