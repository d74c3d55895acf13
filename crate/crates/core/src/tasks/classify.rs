//! One-vs-all image classification with shared filters.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{ensure, Result};
use crate::grad::LossKind;
use crate::init::{unsupervised_init, KmeansOptions};
use crate::layer::{network_apply, NetworkConfig, NetworkParams};
use crate::maps::SpatialMap;
use crate::optim::{
    feature_rows, fit, one_vs_all, solve_w_convex, ClassificationTask, EpochRecord, FitOptions, LinearModel,
    SolverOptions, StopReason,
};
use crate::scalar::Real;

/// Trained network plus one score per class (a single score for two
/// classes).
#[derive(Debug, Clone)]
pub struct ClassifierHead<T> {
    pub net: NetworkParams<T>,
    pub model: LinearModel<T>,
    pub classes: usize,
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax<T: Real>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Class decision from raw model outputs.
pub fn decide<T: Real>(scores: &[T], classes: usize) -> usize {
    if classes == 2 && scores.len() == 1 {
        argmax(&[-scores[0], scores[0]])
    } else {
        argmax(scores)
    }
}

impl<T: Real> ClassifierHead<T> {
    pub fn new(net: NetworkParams<T>, model: LinearModel<T>, classes: usize) -> Result<Self> {
        ensure!(classes >= 2, InvalidArgument, "need at least two classes");
        let outputs = if classes == 2 { 1 } else { classes };
        ensure!(
            model.outputs() == outputs,
            ShapeMismatch,
            "{} model outputs for {classes} classes",
            model.outputs()
        );
        Ok(ClassifierHead { net, model, classes })
    }

    pub fn scores(&self, image: &SpatialMap<T>) -> Result<Vec<T>> {
        let feat = network_apply(&self.net, image)?;
        Ok(self.model.predict(&feat)?.to_vec())
    }

    pub fn predict(&self, image: &SpatialMap<T>) -> Result<usize> {
        Ok(decide(&self.scores(image)?, self.classes))
    }

    pub fn predict_all(&self, images: &[SpatialMap<T>]) -> Result<Vec<usize>> {
        images.par_iter().map(|img| self.predict(img)).collect()
    }
}

/// Percentage of mismatches.
pub fn error_rate(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    ensure!(!labels.is_empty(), Data, "empty evaluation set");
    ensure!(
        predicted.len() == labels.len(),
        ShapeMismatch,
        "{} predictions for {} labels",
        predicted.len(),
        labels.len()
    );
    let wrong = predicted.iter().zip(labels).filter(|(p, l)| p != l).count();
    Ok(100.0 * wrong as f64 / labels.len() as f64)
}

pub fn evaluate_error<T: Real>(head: &ClassifierHead<T>, images: &[SpatialMap<T>], labels: &[usize]) -> Result<f64> {
    ensure!(!images.is_empty(), Data, "empty evaluation set");
    error_rate(&head.predict_all(images)?, labels)
}

#[derive(Debug, Clone)]
pub struct ClassifierConfig {
    pub network: NetworkConfig,
    pub classes: usize,
    pub loss: LossKind,
    pub patches_per_layer: usize,
    pub kmeans: KmeansOptions,
    pub fit: FitOptions,
    pub solver: SolverOptions,
    /// Candidate `lambda = 2^i / n` for these `i`.
    pub lambda_exponents: Vec<i32>,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl ClassifierConfig {
    pub fn new(network: NetworkConfig, classes: usize) -> Self {
        ClassifierConfig {
            network,
            classes,
            loss: LossKind::SquaredHinge,
            patches_per_layer: 100_000,
            kmeans: KmeansOptions::default(),
            fit: FitOptions::default(),
            solver: SolverOptions {
                tol: 1e-5,
                ..Default::default()
            },
            lambda_exponents: (-4..=4).collect(),
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LambdaTrial {
    pub exponent: i32,
    pub lambda: f64,
    pub validation_error: f64,
}

#[derive(Debug, Clone)]
pub struct ClassifierOutcome<T> {
    pub head: ClassifierHead<T>,
    /// Network right after unsupervised initialization.
    pub initial_net: NetworkParams<T>,
    pub lambda: f64,
    pub trials: Vec<LambdaTrial>,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
}

/// Seeded split of `0..n` into (train, validation).
pub fn split_indices(n: usize, validation_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val = ((n as f64) * validation_fraction).round() as usize;
    let val = val.min(n.saturating_sub(1));
    let train = idx.split_off(val);
    (train, idx)
}

fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

fn make_task<T: Real>(
    config: &ClassifierConfig,
    images: Vec<SpatialMap<T>>,
    labels: &[usize],
) -> Result<ClassificationTask<T>> {
    let mut task = ClassificationTask::from_labels(images, labels, config.classes, config.loss)?;
    task.solver = config.solver;
    Ok(task)
}

/// Initialization, lambda selection on a held-out split, then a final run
/// on all the data with the selected lambda.
pub fn train_classifier<T: Real>(
    config: &ClassifierConfig,
    images: &[SpatialMap<T>],
    labels: &[usize],
) -> Result<ClassifierOutcome<T>> {
    ensure!(images.len() == labels.len(), ShapeMismatch, "images and labels differ in length");
    ensure!(images.len() >= 2, Data, "need at least two training images");
    ensure!(!config.lambda_exponents.is_empty(), InvalidArgument, "empty lambda grid");
    let initial_net = unsupervised_init(
        &config.network,
        images,
        config.patches_per_layer,
        config.kmeans,
        config.seed,
    )?;

    let (lambda, trials) = if config.lambda_exponents.len() == 1 {
        let e = config.lambda_exponents[0];
        (2f64.powi(e) / images.len() as f64, Vec::new())
    } else {
        let (tr, va) = split_indices(images.len(), config.validation_fraction, config.seed);
        ensure!(!va.is_empty(), Data, "validation split is empty");
        let train_task = make_task(config, pick(images, &tr), &pick(labels, &tr))?;
        let val_images = pick(images, &va);
        let val_labels = pick(labels, &va);
        let n = tr.len() as f64;
        let mut trials = Vec::new();
        for &e in &config.lambda_exponents {
            let lambda = 2f64.powi(e) / n;
            let res = fit(initial_net.clone(), &train_task, lambda, &config.fit)?;
            let head = ClassifierHead::new(res.net, res.head, config.classes)?;
            let err = evaluate_error(&head, &val_images, &val_labels)?;
            trials.push(LambdaTrial {
                exponent: e,
                lambda,
                validation_error: err,
            });
        }
        // lowest error; ties go to the earliest (smallest) exponent
        let best = trials
            .iter()
            .fold(&trials[0], |b, t| if t.validation_error < b.validation_error { t } else { b });
        (2f64.powi(best.exponent) / images.len() as f64, trials)
    };

    let task = make_task(config, images.to_vec(), labels)?;
    let res = fit(initial_net.clone(), &task, lambda, &config.fit)?;
    Ok(ClassifierOutcome {
        head: ClassifierHead::new(res.net, res.head, config.classes)?,
        initial_net,
        lambda,
        trials,
        history: res.history,
        stop: res.stop,
    })
}

/// Linear one-vs-all classifier on raw (e.g. whitened) pixels, with the
/// same lambda selection.
pub fn train_linear<T: Real>(
    images: &[SpatialMap<T>],
    labels: &[usize],
    classes: usize,
    lambda_exponents: &[i32],
    solver: &SolverOptions,
    seed: u64,
) -> Result<ClassifierHead<T>> {
    ensure!(!images.is_empty(), Data, "no images");
    ensure!(!lambda_exponents.is_empty(), InvalidArgument, "empty lambda grid");
    let channels = images[0].channels();
    let identity = NetworkParams::new(channels, Vec::new())?;
    let x = feature_rows(&identity, images)?;
    ensure!(labels.len() == images.len(), ShapeMismatch, "images and labels differ in length");
    let y: Array2<T> = one_vs_all(labels, classes)?;
    let solve = |rows: &[usize], lambda: f64| -> Result<LinearModel<T>> {
        let xs = x.select(ndarray::Axis(0), rows);
        let ys = y.select(ndarray::Axis(0), rows);
        Ok(solve_w_convex(&xs.view(), &ys.view(), LossKind::SquaredHinge, lambda, solver)?.model)
    };
    let n = images.len();
    let lambda = if lambda_exponents.len() == 1 {
        2f64.powi(lambda_exponents[0]) / n as f64
    } else {
        let (tr, va) = split_indices(n, 0.2, seed);
        let mut best = (f64::INFINITY, lambda_exponents[0]);
        for &e in lambda_exponents {
            let model = solve(&tr, 2f64.powi(e) / tr.len() as f64)?;
            let head = ClassifierHead::new(identity.clone(), model, classes)?;
            let err = evaluate_error(&head, &pick(images, &va), &pick(labels, &va))?;
            if err < best.0 {
                best = (err, e);
            }
        }
        2f64.powi(best.1) / n as f64
    };
    let all: Vec<usize> = (0..n).collect();
    ClassifierHead::new(identity, solve(&all, lambda)?, classes)
}
