//! Unsupervised initialization: spherical K-means on sampled patches, layer
//! by layer.

use std::collections::{BTreeMap, HashSet};

use ndarray::{Array1, Array2, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{ensure, CknError, Result};
use crate::layer::{network_apply, LayerParams, NetworkConfig, NetworkParams};
use crate::maps::{extract_patches, SpatialMap};
use crate::scalar::Real;

/// Patches with a smaller norm are discarded before clustering.
pub const DEGENERATE_NORM: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KmeansOptions {
    pub max_iters: usize,
    /// Stop when the relative objective gain falls below this.
    pub rel_tol: f64,
}

impl Default for KmeansOptions {
    fn default() -> Self {
        KmeansOptions {
            max_iters: 50,
            rel_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KmeansResult<T> {
    /// Unit-norm centroids as columns.
    pub centroids: Array2<T>,
    /// `sum_i max_j <x_i, z_j>` after each assignment step.
    pub objective_trace: Vec<f64>,
}

/// Spherical K-means: cosine assignment, normalized-mean update. Empty
/// clusters are re-seeded from a random data column.
pub fn spherical_kmeans<T: Real>(
    patches: &Array2<T>,
    clusters: usize,
    options: KmeansOptions,
    seed: u64,
) -> Result<KmeansResult<T>> {
    let n = patches.ncols();
    ensure!(clusters >= 1, InvalidArgument, "need at least one centroid");
    ensure!(
        clusters <= n,
        InvalidArgument,
        "{clusters} centroids requested from {n} patches"
    );
    for (i, col) in patches.axis_iter(Axis(1)).enumerate() {
        let norm = col.dot(&col).sqrt().to_f64_lossy();
        ensure!(
            norm > DEGENERATE_NORM,
            InvalidArgument,
            "patch {i} is zero; normalize and filter before clustering"
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, n, clusters);
    let mut centroids = Array2::<T>::zeros((patches.nrows(), clusters));
    for (j, i) in picks.iter().enumerate() {
        centroids.column_mut(j).assign(&patches.column(i));
    }

    let mut trace = Vec::new();
    let mut assignment = vec![0usize; n];
    for iter in 0..options.max_iters.max(1) {
        let sims = centroids.t().dot(patches);
        let mut objective = 0.0f64;
        for (i, col) in sims.axis_iter(Axis(1)).enumerate() {
            let (best, val) = col
                .iter()
                .enumerate()
                .fold((0usize, T::neg_infinity()), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
            assignment[i] = best;
            objective += val.to_f64_lossy();
        }
        let previous = trace.last().copied();
        trace.push(objective);
        if let Some(prev) = previous {
            if (objective - prev) <= options.rel_tol * prev.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
        if iter + 1 == options.max_iters {
            break;
        }
        let mut sums = Array2::<T>::zeros(centroids.dim());
        let mut counts = vec![0usize; clusters];
        for (i, &j) in assignment.iter().enumerate() {
            let mut s = sums.column_mut(j);
            s += &patches.column(i);
            counts[j] += 1;
        }
        for j in 0..clusters {
            if counts[j] == 0 {
                let i = rng.random_range(0..n);
                centroids.column_mut(j).assign(&patches.column(i));
                continue;
            }
            let s = sums.column(j);
            let norm = s.dot(&s).sqrt();
            if norm > T::zero() {
                centroids.column_mut(j).assign(&(&s / norm));
            }
        }
    }
    let mut centroids = centroids;
    crate::layer::normalize_columns(&mut centroids);
    Ok(KmeansResult {
        centroids,
        objective_trace: trace,
    })
}

/// Samples `count` patch columns from the input of layer `depth`, i.e. the
/// output of the first `depth` layers of `net`. Pairs (image, pixel) are
/// drawn uniformly. Columns are returned as extracted (not normalized).
pub fn sample_layer_patches<T: Real>(
    net: &NetworkParams<T>,
    depth: usize,
    patch_size: usize,
    images: &[SpatialMap<T>],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<T>> {
    ensure!(!images.is_empty(), Data, "no images to sample patches from");
    ensure!(depth <= net.depth(), InvalidArgument, "depth {depth} beyond network");
    let prefix = NetworkParams::new(net.input_channels(), net.layers()[..depth].to_vec())?;

    let mut wanted: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for _ in 0..count {
        let img = rng.random_range(0..images.len());
        let (h, w) = prefix.output_grid(images[img].height(), images[img].width());
        let pix = rng.random_range(0..h * w);
        wanted.entry(img).or_default().push(pix);
    }
    let groups: Vec<(usize, Vec<usize>)> = wanted.into_iter().collect();
    let columns: Vec<Array2<T>> = groups
        .par_iter()
        .map(|(img, pixels)| -> Result<Array2<T>> {
            let map = network_apply(&prefix, &images[*img])?;
            let patches = extract_patches(&map, patch_size)?;
            Ok(patches.matrix().select(Axis(1), pixels))
        })
        .collect::<Result<_>>()?;
    let views: Vec<_> = columns.iter().map(|c| c.view()).collect();
    ndarray::concatenate(Axis(1), &views).map_err(|e| CknError::ShapeMismatch(e.to_string()))
}

/// Drops near-zero columns and normalizes the rest.
pub fn normalize_patch_columns<T: Real>(patches: &Array2<T>) -> Array2<T> {
    let keep: Vec<usize> = patches
        .axis_iter(Axis(1))
        .enumerate()
        .filter(|(_, c)| c.dot(c).sqrt().to_f64_lossy() >= DEGENERATE_NORM)
        .map(|(i, _)| i)
        .collect();
    let mut out = patches.select(Axis(1), &keep);
    crate::layer::normalize_columns(&mut out);
    out
}

fn distinct_columns<T: Real>(patches: &Array2<T>, at_least: usize) -> usize {
    let mut seen = HashSet::new();
    for col in patches.axis_iter(Axis(1)) {
        let key: Vec<u64> = col.iter().map(|v| v.to_f64_lossy().to_bits()).collect();
        seen.insert(key);
        if seen.len() >= at_least {
            break;
        }
    }
    seen.len()
}

/// Builds every layer in order from K-means centroids of patches sampled
/// through the layers learned so far.
pub fn unsupervised_init<T: Real>(
    config: &NetworkConfig,
    images: &[SpatialMap<T>],
    patches_per_layer: usize,
    options: KmeansOptions,
    seed: u64,
) -> Result<NetworkParams<T>> {
    ensure!(!images.is_empty(), Data, "unsupervised init needs images");
    for img in images {
        ensure!(
            img.channels() == config.input_channels,
            ShapeMismatch,
            "image has {} channels, network expects {}",
            img.channels(),
            config.input_channels
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = NetworkParams::new(config.input_channels, Vec::new())?;
    for (j, lc) in config.layers.iter().enumerate() {
        let raw = sample_layer_patches(&net, j, lc.patch_size, images, patches_per_layer, &mut rng)?;
        let unit = normalize_patch_columns(&raw);
        let distinct = distinct_columns(&unit, lc.filters);
        if distinct < lc.filters {
            return Err(CknError::Data(format!(
                "layer {j}: only {distinct} distinct non-degenerate patches for {} filters",
                lc.filters
            )));
        }
        let km = spherical_kmeans(&unit, lc.filters, options, rng.random())?;
        let layer = LayerParams::from_config(lc, net.output_channels(), km.centroids)?;
        net.push_layer(layer)?;
    }
    Ok(net)
}

/// Mean cosine between each patch and its closest centroid.
pub fn mean_best_cosine<T: Real>(patches: &Array2<T>, centroids: &Array2<T>) -> f64 {
    let sims = centroids.t().dot(patches);
    let best: Array1<f64> = sims
        .axis_iter(Axis(1))
        .map(|c| c.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64_lossy())))
        .collect();
    best.mean().unwrap_or(0.0)
}
