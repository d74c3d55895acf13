//! Maps flat configuration keys onto library options.

use std::path::PathBuf;

use ckn::grad::LossKind;
use ckn::init::KmeansOptions;
use ckn::io::Config;
use ckn::layer::{LayerConfig, NetworkConfig, DEFAULT_ALPHA, DEFAULT_EPSILON};
use ckn::optim::{FitOptions, SolverOptions};
use ckn::tasks::WhiteningOptions;
use ckn::{CknError, Result};

pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "net.layers",
    "net.alpha",
    "net.epsilon",
    "init.patches",
    "init.kmeans_iters",
    "train.epochs",
    "train.eta",
    "train.momentum",
    "train.batch",
    "train.reactivate",
    "train.min_eta",
    "train.learn_alpha",
    "train.alpha_rate",
    "train.precondition",
    "train.precondition_ridge",
    "train.precondition_patches",
    "train.loss",
    "train.lambda_exponents",
    "train.validation_fraction",
    "train.solver_tol",
    "train.solver_passes",
    "dataset.kind",
    "dataset.path",
    "dataset.test_path",
    "dataset.train_limit",
    "dataset.test_limit",
    "dataset.classes",
    "dataset.channels",
    "dataset.size",
    "whiten.enabled",
    "whiten.window",
    "whiten.patch_size",
    "whiten.patches",
    "whiten.epsilon",
    "sr.images",
    "sr.synthetic_images",
    "sr.synthetic_size",
    "sr.patches",
    "sr.patch_size",
    "sr.lambda",
];

/// `patch:filters:subsampling[,...]`, e.g. `3:32:1.414,3:64:3`.
pub fn network(cfg: &Config, input_channels: usize, default_layers: &str) -> Result<NetworkConfig> {
    let raw = cfg.str("net.layers").unwrap_or(default_layers);
    let alpha = cfg.get_or("net.alpha", DEFAULT_ALPHA)?;
    let epsilon = cfg.get_or("net.epsilon", DEFAULT_EPSILON)?;
    let mut layers = Vec::new();
    for spec in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let parts: Vec<&str> = spec.split(':').collect();
        let bad = || cfg.error("net.layers", format!("layer '{spec}' is not patch:filters:subsampling"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let patch = parts[0].parse().map_err(|_| bad())?;
        let filters = parts[1].parse().map_err(|_| bad())?;
        let subsampling: f64 = parts[2].parse().map_err(|_| bad())?;
        let mut layer = LayerConfig::new(patch, filters, subsampling);
        layer.alpha = alpha;
        layer.epsilon = epsilon;
        layers.push(layer);
    }
    if layers.is_empty() {
        return Err(cfg.error("net.layers", "no layers"));
    }
    Ok(NetworkConfig {
        input_channels,
        layers,
    })
}

pub fn kmeans(cfg: &Config) -> Result<KmeansOptions> {
    let d = KmeansOptions::default();
    Ok(KmeansOptions {
        max_iters: cfg.get_or("init.kmeans_iters", d.max_iters)?,
        ..d
    })
}

pub fn fit(cfg: &Config, seed: u64) -> Result<FitOptions> {
    let d = FitOptions::default();
    Ok(FitOptions {
        epochs: cfg.get_or("train.epochs", d.epochs)?,
        eta: cfg.get_or("train.eta", d.eta)?,
        momentum: cfg.get_or("train.momentum", d.momentum)?,
        batch_size: cfg.get_or("train.batch", d.batch_size)?,
        reactivate: cfg.get_or("train.reactivate", d.reactivate)?,
        min_eta: cfg.get_or("train.min_eta", d.min_eta)?,
        learn_alpha: cfg.bool_or("train.learn_alpha", d.learn_alpha)?,
        alpha_rate: cfg.get_or("train.alpha_rate", d.alpha_rate)?,
        precondition: cfg.bool_or("train.precondition", d.precondition)?,
        preconditioner_ridge: cfg.get_or("train.precondition_ridge", d.preconditioner_ridge)?,
        preconditioner_patches: cfg.get_or("train.precondition_patches", d.preconditioner_patches)?,
        seed,
    })
}

pub fn solver(cfg: &Config, seed: u64, default_tol: f64) -> Result<SolverOptions> {
    let d = SolverOptions::default();
    Ok(SolverOptions {
        tol: cfg.get_or("train.solver_tol", default_tol)?,
        max_passes: cfg.get_or("train.solver_passes", d.max_passes)?,
        seed,
        ..d
    })
}

pub fn loss(cfg: &Config) -> Result<LossKind> {
    cfg.get_or("train.loss", LossKind::SquaredHinge)
}

pub fn lambda_exponents(cfg: &Config) -> Result<Vec<i32>> {
    Ok(cfg.list("train.lambda_exponents")?.unwrap_or_else(|| (-4..=4).collect()))
}

pub fn whitening(cfg: &Config, seed: u64) -> Result<Option<WhiteningOptions>> {
    if !cfg.bool_or("whiten.enabled", false)? {
        return Ok(None);
    }
    let d = WhiteningOptions::default();
    Ok(Some(WhiteningOptions {
        window: cfg.get_or("whiten.window", d.window)?,
        patch_size: cfg.get_or("whiten.patch_size", d.patch_size)?,
        patches: cfg.get_or("whiten.patches", d.patches)?,
        epsilon: cfg.get_or("whiten.epsilon", d.epsilon)?,
        seed,
    }))
}

pub fn path(cfg: &Config, key: &str) -> Result<PathBuf> {
    cfg.str(key)
        .map(PathBuf::from)
        .ok_or_else(|| CknError::Config {
            line: 0,
            message: format!("missing required key '{key}'"),
        })
}
