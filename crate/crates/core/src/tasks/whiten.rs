//! Local whitening: per-pixel centering over a small window, then a ZCA
//! transform estimated on training patches and applied as a convolution.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, CknError, Result};
use crate::init::sample_layer_patches;
use crate::layer::NetworkParams;
use crate::maps::{extract_patches, SpatialMap};
use crate::scalar::Real;

/// Box mean over a `window x window` neighborhood, averaging only the
/// pixels that fall inside the image.
pub fn local_mean<T: Real>(image: &SpatialMap<T>, window: usize) -> Result<SpatialMap<T>> {
    ensure!(window % 2 == 1, InvalidArgument, "window must be odd, got {window}");
    let (c, h, w) = image.shape();
    let r = window / 2;
    // summed-area table per channel
    let mut out = SpatialMap::zeros(c, h, w);
    let mut table = vec![0.0f64; (h + 1) * (w + 1)];
    for ch in 0..c {
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += image.get(ch, y, x).to_f64_lossy();
                table[(y + 1) * (w + 1) + x + 1] = table[y * (w + 1) + x + 1] + row;
            }
        }
        for y in 0..h {
            let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
            for x in 0..w {
                let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
                let s = table[y1 * (w + 1) + x1] - table[y0 * (w + 1) + x1] - table[y1 * (w + 1) + x0]
                    + table[y0 * (w + 1) + x0];
                out.set(ch, y, x, T::lit(s / ((y1 - y0) * (x1 - x0)) as f64));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct WhiteningOptions {
    pub window: usize,
    pub patch_size: usize,
    pub patches: usize,
    /// Added to the eigenvalues, relative to their mean.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for WhiteningOptions {
    fn default() -> Self {
        WhiteningOptions {
            window: 5,
            patch_size: 3,
            patches: 100_000,
            epsilon: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Fitted<T> {
    /// ZCA matrix on flattened patches.
    zca: Array2<T>,
    channels: usize,
}

/// Frozen whitening statistics, fitted once on training images.
#[derive(Debug, Clone)]
pub struct LocalWhitening<T> {
    options: WhiteningOptions,
    fitted: Option<Fitted<T>>,
}

impl<T: Real> LocalWhitening<T> {
    pub fn new(options: WhiteningOptions) -> Self {
        LocalWhitening { options, fitted: None }
    }

    pub fn options(&self) -> &WhiteningOptions {
        &self.options
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted.is_some()
    }

    pub fn center(&self, image: &SpatialMap<T>) -> Result<SpatialMap<T>> {
        let mean = local_mean(image, self.options.window)?;
        Ok(SpatialMap::new(image.matrix() - mean.matrix(), image.height(), image.width())?)
    }

    /// Estimates the ZCA transform from patches of the centered images.
    pub fn fit(&mut self, images: &[SpatialMap<T>]) -> Result<()> {
        ensure!(!images.is_empty(), Data, "no images to fit whitening on");
        let channels = images[0].channels();
        let centered: Vec<_> = images.iter().map(|i| self.center(i)).collect::<Result<_>>()?;
        let identity = NetworkParams::new(channels, Vec::new())?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.options.seed);
        let q = self.options.patch_size;
        let patches = sample_layer_patches(&identity, 0, q, &centered, self.options.patches, &mut rng)?;
        let n = T::from_usize_lossy(patches.ncols());
        let moment = patches.dot(&patches.t()) / n;
        let (values, vectors) = T::symmetric_eigen(&moment);
        let mean_eig = values.mean().unwrap_or(T::zero());
        let eps = T::lit(self.options.epsilon) * mean_eig;
        ensure!(
            values.iter().all(|&l| l + eps > T::zero()),
            SingularMatrix,
            "patch second moment is degenerate"
        );
        let mut scaled = vectors.clone();
        for (mut col, &l) in scaled.axis_iter_mut(Axis(1)).zip(values.iter()) {
            col /= (l + eps).sqrt();
        }
        let zca = scaled.dot(&vectors.t());
        self.fitted = Some(Fitted { zca, channels });
        Ok(())
    }

    fn stats(&self) -> Result<&Fitted<T>> {
        self.fitted
            .as_ref()
            .ok_or_else(|| CknError::InvalidArgument("whitening statistics are not fitted".into()))
    }

    /// ZCA applied to patch columns (for checking the fitted statistics).
    pub fn whiten_patches(&self, patches: &Array2<T>) -> Result<Array2<T>> {
        let st = self.stats()?;
        ensure!(
            patches.nrows() == st.zca.nrows(),
            ShapeMismatch,
            "patches have {} rows, expected {}",
            patches.nrows(),
            st.zca.nrows()
        );
        Ok(st.zca.dot(patches))
    }

    /// Centers and whitens an image; every output pixel is the row of the
    /// ZCA matrix belonging to the patch center applied to its patch.
    pub fn apply(&self, image: &SpatialMap<T>) -> Result<SpatialMap<T>> {
        let st = self.stats()?;
        ensure!(
            image.channels() == st.channels,
            ShapeMismatch,
            "whitening fitted for {} channels, image has {}",
            st.channels,
            image.channels()
        );
        let q = self.options.patch_size;
        let centered = self.center(image)?;
        let patches = extract_patches(&centered, q)?;
        let center = q / 2;
        let rows: Vec<usize> = (0..st.channels).map(|c| (c * q + center) * q + center).collect();
        let filters = st.zca.select(Axis(0), &rows);
        SpatialMap::new(filters.dot(patches.matrix()), image.height(), image.width())
    }

    /// Fitted ZCA matrix, if any.
    pub fn zca(&self) -> Option<&Array2<T>> {
        self.fitted.as_ref().map(|f| &f.zca)
    }

    /// Rebuilds fitted statistics from a stored ZCA matrix.
    pub fn from_parts(options: WhiteningOptions, channels: usize, zca: Array2<T>) -> Result<Self> {
        let d = channels * options.patch_size * options.patch_size;
        ensure!(zca.dim() == (d, d), ShapeMismatch, "ZCA matrix must be {d}x{d}");
        Ok(LocalWhitening {
            options,
            fitted: Some(Fitted { zca, channels }),
        })
    }
}

/// Empirical covariance of the columns.
pub fn column_covariance<T: Real>(columns: &Array2<T>) -> Array2<f64> {
    let x = columns.mapv(|v| v.to_f64_lossy());
    let mean: Array1<f64> = x.mean_axis(Axis(1)).expect("non-empty");
    let c = &x - &mean.insert_axis(Axis(1));
    c.dot(&c.t()) / (x.ncols() as f64 - 1.0)
}
