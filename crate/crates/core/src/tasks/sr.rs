//! Single-image super-resolution on the luminance channel.
//!
//! The network sees the bicubic upscale with its local mean removed and
//! predicts a per-pixel correction `<w, I_k(z)>` that is added back to the
//! bicubic estimate, so a zero head reproduces bicubic interpolation.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{ensure, CknError, Result};
use crate::grad::{backward_from_top, GradientSet, WhiteningGradient};
use crate::init::{unsupervised_init, KmeansOptions};
use crate::layer::{network_apply, network_forward, NetworkConfig, NetworkParams};
use crate::maps::SpatialMap;
use crate::optim::solver::ridge_from_moments;
use crate::optim::{fit, EpochRecord, FitOptions, LinearModel, SampleGradient, StopReason, TrainingTask};
use crate::scalar::Real;
use crate::tasks::color::{rgb_to_ycbcr, ycbcr_to_rgb};
use crate::tasks::metrics::{psnr, ssim, PEAK};
use crate::tasks::resize::{bicubic_resize, resize_with};
use crate::tasks::whiten::local_mean;

pub const MEAN_WINDOW: usize = 5;

/// Training pairs: mean-removed bicubic inputs and targets with the same
/// mean removed.
#[derive(Debug, Clone)]
pub struct SrPatchSet<T> {
    pub inputs: Vec<SpatialMap<T>>,
    pub targets: Vec<SpatialMap<T>>,
}

fn subtract<T: Real>(a: &SpatialMap<T>, b: &SpatialMap<T>) -> Result<SpatialMap<T>> {
    SpatialMap::new(a.matrix() - b.matrix(), a.height(), a.width())
}

fn add<T: Real>(a: &SpatialMap<T>, b: &SpatialMap<T>) -> Result<SpatialMap<T>> {
    SpatialMap::new(a.matrix() + b.matrix(), a.height(), a.width())
}

/// Degrades a high-resolution patch and returns `(input, target)`.
pub fn make_pair<T: Real>(hr: &SpatialMap<T>, scale: usize) -> Result<(SpatialMap<T>, SpatialMap<T>)> {
    let (_, h, w) = hr.shape();
    ensure!(
        h % scale == 0 && w % scale == 0,
        InvalidArgument,
        "patch {h}x{w} is not a multiple of {scale}"
    );
    let low = bicubic_resize(hr, 1.0 / scale as f64, true)?;
    let up = resize_with(&low, h, w, scale as f64, true)?;
    let mean = local_mean(&up, MEAN_WINDOW)?;
    Ok((subtract(&up, &mean)?, subtract(hr, &mean)?))
}

/// Random `size x size` crops of single-channel images, degraded by
/// `scale`. Deterministic for a given seed.
pub fn build_sr_patchset<T: Real>(
    images: &[SpatialMap<T>],
    count: usize,
    size: usize,
    scale: usize,
    seed: u64,
) -> Result<SrPatchSet<T>> {
    ensure!(!images.is_empty(), Data, "no images");
    ensure!(scale >= 2, InvalidArgument, "scale must be at least 2");
    ensure!(size % scale == 0, InvalidArgument, "patch size {size} is not a multiple of {scale}");
    for img in images {
        ensure!(img.channels() == 1, ShapeMismatch, "patch set expects luminance images");
        ensure!(
            img.height() >= size && img.width() >= size,
            Data,
            "image {}x{} is smaller than the {size}x{size} patch",
            img.height(),
            img.width()
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let crops: Vec<(usize, usize, usize)> = (0..count)
        .map(|_| {
            let i = rng.random_range(0..images.len());
            let y = rng.random_range(0..=images[i].height() - size);
            let x = rng.random_range(0..=images[i].width() - size);
            (i, y, x)
        })
        .collect();
    let pairs: Vec<(SpatialMap<T>, SpatialMap<T>)> = crops
        .par_iter()
        .map(|&(i, y0, x0)| {
            let crop = SpatialMap::from_fn(1, size, size, |_, y, x| images[i].get(0, y0 + y, x0 + x));
            make_pair(&crop, scale)
        })
        .collect::<Result<_>>()?;
    let (inputs, targets) = pairs.into_iter().unzip();
    Ok(SrPatchSet { inputs, targets })
}

/// Square loss on the per-pixel residual `target - input - <w, I_k>`,
/// averaged over pixels then samples.
pub struct SrTask<'a, T> {
    pub set: &'a SrPatchSet<T>,
}

impl<T: Real> SrTask<'_, T> {
    fn residual_target(&self, i: usize) -> Array1<T> {
        let r = self.set.targets[i].matrix() - self.set.inputs[i].matrix();
        r.row(0).to_owned()
    }
}

impl<T: Real> TrainingTask<T> for SrTask<'_, T> {
    fn inputs(&self) -> &[SpatialMap<T>] {
        &self.set.inputs
    }

    fn fit_head(&self, net: &NetworkParams<T>, lambda: f64, _seed: u64) -> Result<(LinearModel<T>, f64)> {
        ensure!(lambda > 0.0, InvalidArgument, "lambda must be positive");
        ensure!(
            net.layers().iter().all(|l| l.pool().is_none()),
            InvalidArgument,
            "super-resolution networks must not pool"
        );
        let p = net.output_channels();
        // per-sample moments, reduced in order
        type Moments = (Array2<f64>, Array1<f64>, f64, usize);
        let parts: Vec<Moments> = (0..self.len())
            .into_par_iter()
            .map(|i| -> Result<Moments> {
                let feat = network_apply(net, &self.set.inputs[i])?;
                let f = feat.matrix().mapv(|v| v.to_f64_lossy());
                let r = self.residual_target(i).mapv(|v| v.to_f64_lossy());
                Ok((f.dot(&f.t()), f.dot(&r), r.dot(&r), r.len()))
            })
            .collect::<Result<_>>()?;
        let mut gram = Array2::<f64>::zeros((p, p));
        let mut cross = Array1::<f64>::zeros(p);
        let mut rr = 0.0;
        let mut pixels = 0usize;
        for (g, c, r, m) in &parts {
            gram += g;
            cross += c;
            rr += r;
            pixels += m;
        }
        // every patch has the same size, so pooling pixels matches the
        // per-sample average
        let m = pixels as f64;
        gram /= m;
        cross /= m;
        rr /= m;
        let w: Array1<T> = ridge_from_moments(&gram, &cross, lambda)?;
        let wf = w.mapv(|v| v.to_f64_lossy());
        let objective = rr - 2.0 * wf.dot(&cross) + wf.dot(&gram.dot(&wf)) + 0.5 * lambda * wf.dot(&wf);
        let head = LinearModel::new(w.insert_axis(Axis(0)), lambda)?;
        Ok((head, objective))
    }

    fn sample_gradient(&self, net: &NetworkParams<T>, head: &LinearModel<T>, index: usize) -> Result<SampleGradient<T>> {
        let (feat, caches) = network_forward(net, &self.set.inputs[index], true)?;
        let w = head.weights().row(0).to_owned();
        let pred = w.dot(feat.matrix());
        let err = self.residual_target(index) - &pred;
        let m = T::from_usize_lossy(err.len());
        let loss = err.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>() / err.len() as f64;
        // d/dI of mean (r - <w, I>)^2 is -2 (r - <w, I>) w / m per pixel
        let coef = err.mapv(|e| -T::lit(2.0) * e / m);
        let top = w
            .view()
            .insert_axis(Axis(1))
            .dot(&coef.view().insert_axis(Axis(0)));
        let mut grads: GradientSet<T> = backward_from_top(net, &caches, &top, WhiteningGradient::Exact)?;
        grads.weights = Some(coef.dot(&feat.matrix().t()).insert_axis(Axis(0)));
        Ok(SampleGradient {
            loss,
            grads,
            active: true,
        })
    }
}

/// Network (no pooling) plus per-pixel linear correction.
#[derive(Debug, Clone)]
pub struct SrModel<T> {
    pub net: NetworkParams<T>,
    pub head: LinearModel<T>,
    pub scale: usize,
}

impl<T: Real> SrModel<T> {
    pub fn new(net: NetworkParams<T>, head: LinearModel<T>, scale: usize) -> Result<Self> {
        ensure!(
            net.layers().iter().all(|l| l.pool().is_none()),
            InvalidArgument,
            "super-resolution networks must not pool"
        );
        ensure!(
            head.outputs() == 1 && head.dim() == net.output_channels(),
            ShapeMismatch,
            "head must map {} channels to one value",
            net.output_channels()
        );
        ensure!(scale == 2, InvalidArgument, "models are trained for x2");
        Ok(SrModel { net, head, scale })
    }

    /// A model that reproduces bicubic interpolation.
    pub fn zero_head(net: NetworkParams<T>) -> Result<Self> {
        let p = net.output_channels();
        SrModel::new(net, LinearModel::zeros(1, p, 0.0), 2)
    }

    /// One x2 step on a luminance map.
    pub fn upscale_x2(&self, luma: &SpatialMap<T>) -> Result<SpatialMap<T>> {
        ensure!(luma.channels() == 1, ShapeMismatch, "expected a luminance map");
        let up = bicubic_resize(luma, 2.0, true)?;
        let mean = local_mean(&up, MEAN_WINDOW)?;
        let input = subtract(&up, &mean)?;
        let feat = network_apply(&self.net, &input)?;
        let correction = self.head.weights().row(0).dot(feat.matrix()).insert_axis(Axis(0));
        let corr = SpatialMap::new(correction, up.height(), up.width())?;
        add(&up, &corr)
    }

    /// x2 directly; x3 as two x2 steps followed by a 3/4 bicubic resize.
    pub fn upscale_luma(&self, luma: &SpatialMap<T>, factor: usize) -> Result<SpatialMap<T>> {
        match factor {
            2 => self.upscale_x2(luma),
            3 => {
                let four = self.upscale_x2(&self.upscale_x2(luma)?)?;
                resize_with(&four, 3 * luma.height(), 3 * luma.width(), 0.75, true)
            }
            other => Err(CknError::InvalidArgument(format!("unsupported factor {other}"))),
        }
    }
}

/// Upscales an RGB image on `[0, 255]`: model on luminance, bicubic on
/// chroma.
pub fn sr_upscale<T: Real>(model: &SrModel<T>, rgb: &SpatialMap<T>, factor: usize) -> Result<SpatialMap<T>> {
    ensure!(factor == 2 || factor == 3, InvalidArgument, "unsupported factor {factor}");
    let ycc = rgb_to_ycbcr(rgb)?;
    let y = model.upscale_luma(&ycc.channel(0), factor)?;
    let (h, w) = (y.height(), y.width());
    let mut out = SpatialMap::zeros(3, h, w);
    out.matrix_mut().row_mut(0).assign(&y.matrix().row(0));
    for c in 1..3 {
        let up = resize_with(&ycc.channel(c), h, w, factor as f64, true)?;
        out.matrix_mut().row_mut(c).assign(&up.matrix().row(0));
    }
    ycbcr_to_rgb(&out)
}

/// Crops so both sides are multiples of `scale`.
pub fn modcrop<T: Real>(image: &SpatialMap<T>, scale: usize) -> SpatialMap<T> {
    let (c, h, w) = image.shape();
    let (h2, w2) = (h - h % scale, w - w % scale);
    SpatialMap::from_fn(c, h2, w2, |ch, y, x| image.get(ch, y, x))
}

/// Luminance of the high-resolution image and of its bicubic-degraded
/// low-resolution version (`[0, 255]` scale).
pub fn degrade<T: Real>(hr_rgb: &SpatialMap<T>, scale: usize) -> Result<(SpatialMap<T>, SpatialMap<T>)> {
    let hr = modcrop(hr_rgb, scale);
    let luma = if hr.channels() == 3 { rgb_to_ycbcr(&hr)?.channel(0) } else { hr };
    let low = bicubic_resize(&luma, 1.0 / scale as f64, true)?;
    Ok((luma, low))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrScore {
    pub psnr: f64,
    pub ssim: f64,
}

/// PSNR/SSIM on luminance, shaving `scale` pixels, for the model (or
/// plain bicubic when `model` is `None`).
pub fn evaluate_sr<T: Real>(hr_rgb: &SpatialMap<T>, scale: usize, model: Option<&SrModel<T>>) -> Result<SrScore> {
    let (hr, low) = degrade(hr_rgb, scale)?;
    let est = match model {
        Some(m) => m.upscale_luma(&low, scale)?,
        None => resize_with(&low, hr.height(), hr.width(), scale as f64, true)?,
    };
    let est = est.map_values(|v| v.max(T::zero()).min(T::lit(PEAK)));
    let p = psnr(&hr, &est, scale, PEAK)?;
    let (h, w) = (hr.height(), hr.width());
    let shave = |m: &SpatialMap<T>| SpatialMap::from_fn(1, h - 2 * scale, w - 2 * scale, |_, y, x| m.get(0, y + scale, x + scale));
    let s = ssim(&shave(&hr), &shave(&est))?;
    Ok(SrScore { psnr: p, ssim: s })
}

#[derive(Debug, Clone)]
pub struct SrConfig {
    pub network: NetworkConfig,
    pub patches: usize,
    pub patch_size: usize,
    pub lambda: f64,
    pub init_patches: usize,
    pub kmeans: KmeansOptions,
    pub fit: FitOptions,
    pub seed: u64,
}

impl SrConfig {
    pub fn new(network: NetworkConfig) -> Self {
        SrConfig {
            network,
            patches: 200_000,
            patch_size: 32,
            lambda: 1e-4,
            init_patches: 100_000,
            kmeans: KmeansOptions::default(),
            fit: FitOptions::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SrOutcome<T> {
    pub model: SrModel<T>,
    pub initial: SrModel<T>,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
}

/// Patch extraction, unsupervised initialization and supervised training
/// of a x2 model on luminance images.
pub fn sr_train<T: Real>(config: &SrConfig, luma_images: &[SpatialMap<T>]) -> Result<SrOutcome<T>> {
    ensure!(
        config.network.input_channels == 1,
        InvalidArgument,
        "super-resolution works on one channel"
    );
    ensure!(
        config.network.layers.iter().all(|l| l.subsampling == 1.0),
        InvalidArgument,
        "super-resolution networks must not pool (subsampling 1 on every layer)"
    );
    let set = build_sr_patchset(luma_images, config.patches, config.patch_size, 2, config.seed)?;
    let net = unsupervised_init(&config.network, &set.inputs, config.init_patches, config.kmeans, config.seed)?;
    let task = SrTask { set: &set };
    let init_fit = FitOptions {
        epochs: 0,
        ..config.fit
    };
    let initial = fit(net.clone(), &task, config.lambda, &init_fit)?;
    let res = fit(net, &task, config.lambda, &config.fit)?;
    Ok(SrOutcome {
        model: SrModel::new(res.net, res.head, 2)?,
        initial: SrModel::new(initial.net, initial.head, 2)?,
        history: res.history,
        stop: res.stop,
    })
}
