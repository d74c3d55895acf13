//! Alternating training: solve the convex head with the filters frozen,
//! then one epoch of preconditioned stochastic steps on the filters.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{ensure, CknError, Result};
use crate::grad::{network_backward, GradientSet, LossKind};
use crate::init::{normalize_patch_columns, sample_layer_patches};
use crate::layer::{network_apply, network_forward, NetworkParams};
use crate::maps::SpatialMap;
use crate::optim::model::{flatten, LinearModel};
use crate::optim::precond::{compute_preconditioner, Preconditioner, DEFAULT_RIDGE};
use crate::optim::solver::{solve_w_convex, SolverOptions};
use crate::optim::sphere::sphere_step;
use crate::scalar::Real;

/// Smallest kernel parameter allowed by the `alpha` updates.
const MIN_ALPHA: f64 = 1e-3;

/// Per-sample loss and parameter gradients.
#[derive(Debug, Clone)]
pub struct SampleGradient<T> {
    pub loss: f64,
    pub grads: GradientSet<T>,
    /// `false` when the loss derivative vanished and the sample can leave
    /// the active set.
    pub active: bool,
}

/// A supervised problem the trainer can optimize.
pub trait TrainingTask<T: Real>: Sync {
    fn inputs(&self) -> &[SpatialMap<T>];

    fn len(&self) -> usize {
        self.inputs().len()
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Optimal head for the frozen network and the full objective value.
    fn fit_head(
        &self,
        net: &NetworkParams<T>,
        lambda: f64,
        seed: u64,
    ) -> Result<(LinearModel<T>, f64)>;

    fn sample_gradient(
        &self,
        net: &NetworkParams<T>,
        head: &LinearModel<T>,
        index: usize,
    ) -> Result<SampleGradient<T>>;
}

/// One-vs-all (or single-output) prediction from the final feature map.
#[derive(Debug, Clone)]
pub struct ClassificationTask<T> {
    pub images: Vec<SpatialMap<T>>,
    /// `n x outputs`, entries in `{-1, +1}` for margin losses.
    pub targets: Array2<T>,
    pub loss: LossKind,
    pub solver: SolverOptions,
}

impl<T: Real> ClassificationTask<T> {
    /// One-vs-all targets from class indices.
    pub fn from_labels(
        images: Vec<SpatialMap<T>>,
        labels: &[usize],
        classes: usize,
        loss: LossKind,
    ) -> Result<Self> {
        ensure!(
            images.len() == labels.len(),
            ShapeMismatch,
            "{} images but {} labels",
            images.len(),
            labels.len()
        );
        let targets = one_vs_all(labels, classes)?;
        Ok(ClassificationTask {
            images,
            targets,
            loss,
            solver: SolverOptions::default(),
        })
    }

    /// Flattened final feature maps, one row per image.
    pub fn features(&self, net: &NetworkParams<T>) -> Result<Array2<T>> {
        feature_rows(net, &self.images)
    }
}

/// `n x outputs` targets in `{-1, +1}`. Two classes use a single output
/// that is positive for class 1.
pub fn one_vs_all<T: Real>(labels: &[usize], classes: usize) -> Result<Array2<T>> {
    ensure!(classes >= 2, InvalidArgument, "need at least two classes");
    ensure!(
        labels.iter().all(|&l| l < classes),
        InvalidArgument,
        "label out of range for {classes} classes"
    );
    let outputs = if classes == 2 { 1 } else { classes };
    Ok(Array2::from_shape_fn((labels.len(), outputs), |(i, c)| {
        let positive = if classes == 2 { labels[i] == 1 } else { labels[i] == c };
        if positive {
            T::one()
        } else {
            -T::one()
        }
    }))
}

/// Stacks the flattened network outputs of `images` as rows.
pub fn feature_rows<T: Real>(net: &NetworkParams<T>, images: &[SpatialMap<T>]) -> Result<Array2<T>> {
    ensure!(!images.is_empty(), Data, "no images");
    let rows: Vec<_> = images
        .par_iter()
        .map(|img| network_apply(net, img).map(|m| flatten(&m)))
        .collect::<Result<_>>()?;
    let dim = rows[0].len();
    ensure!(
        rows.iter().all(|r| r.len() == dim),
        ShapeMismatch,
        "images produce feature maps of different sizes"
    );
    let mut out = Array2::zeros((rows.len(), dim));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(&rows) {
        dst.assign(src);
    }
    Ok(out)
}

impl<T: Real> TrainingTask<T> for ClassificationTask<T> {
    fn inputs(&self) -> &[SpatialMap<T>] {
        &self.images
    }

    fn fit_head(&self, net: &NetworkParams<T>, lambda: f64, seed: u64) -> Result<(LinearModel<T>, f64)> {
        let x = self.features(net)?;
        let options = SolverOptions { seed, ..self.solver };
        let sol = solve_w_convex(&x.view(), &self.targets.view(), self.loss, lambda, &options)?;
        Ok((sol.model, sol.objective))
    }

    fn sample_gradient(
        &self,
        net: &NetworkParams<T>,
        head: &LinearModel<T>,
        index: usize,
    ) -> Result<SampleGradient<T>> {
        let (feat, caches) = network_forward(net, &self.images[index], true)?;
        let pred = head.predict(&feat)?.to_vec();
        let y = self.targets.row(index).to_vec();
        let loss: f64 = y
            .iter()
            .zip(&pred)
            .map(|(&t, &p)| crate::grad::loss_value_grad(self.loss, t, p).0.to_f64_lossy())
            .sum();
        let grads = network_backward(net, &caches, head, self.loss, &y, &pred)?;
        let zero_derivative = grads
            .weights
            .as_ref()
            .is_some_and(|w| w.iter().all(|v| *v == T::zero()));
        let active = !(self.loss == LossKind::SquaredHinge && zero_derivative);
        Ok(SampleGradient { loss, grads, active })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub epochs: usize,
    pub eta: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Fraction of inactive samples reactivated after each epoch.
    pub reactivate: f64,
    pub min_eta: f64,
    pub learn_alpha: bool,
    /// `alpha` steps use `eta * alpha_rate`.
    pub alpha_rate: f64,
    pub precondition: bool,
    pub preconditioner_ridge: f64,
    pub preconditioner_patches: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            epochs: 100,
            eta: 10.0,
            momentum: 0.9,
            batch_size: 128,
            reactivate: 0.1,
            min_eta: 1e-8,
            learn_alpha: false,
            alpha_rate: 0.01,
            precondition: true,
            preconditioner_ridge: DEFAULT_RIDGE,
            preconditioner_patches: 10_000,
            seed: 0,
        }
    }
}

/// Mutable optimizer state carried across epochs.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub eta: f64,
    pub momentum: f64,
    pub velocity: Vec<Array2<T>>,
    pub alpha_velocity: Vec<f64>,
    pub active: Vec<bool>,
    pub best_objective: f64,
    pub epoch: usize,
    rng: ChaCha8Rng,
}

impl<T: Real> TrainState<T> {
    pub fn new(net: &NetworkParams<T>, samples: usize, eta: f64, momentum: f64, seed: u64) -> Result<Self> {
        ensure!(eta > 0.0, InvalidArgument, "learning rate must be positive");
        ensure!(
            (0.0..1.0).contains(&momentum),
            InvalidArgument,
            "momentum must lie in [0, 1)"
        );
        Ok(TrainState {
            eta,
            momentum,
            velocity: net
                .layers()
                .iter()
                .map(|l| Array2::zeros(l.filters().dim()))
                .collect(),
            alpha_velocity: vec![0.0; net.depth()],
            active: vec![true; samples],
            best_objective: f64::INFINITY,
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn reset_momentum(&mut self) {
        self.velocity.iter_mut().for_each(|v| v.fill(T::zero()));
        self.alpha_velocity.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Reactivates a random `fraction` of the inactive samples.
    pub fn reactivate(&mut self, fraction: f64) {
        let mut inactive: Vec<usize> = (0..self.active.len()).filter(|&i| !self.active[i]).collect();
        let count = (fraction * inactive.len() as f64).ceil() as usize;
        inactive.shuffle(&mut self.rng);
        for &i in inactive.iter().take(count) {
            self.active[i] = true;
        }
    }
}

/// `Q_j` for every layer from patches of the current network.
pub fn layer_preconditioners<T: Real>(
    net: &NetworkParams<T>,
    images: &[SpatialMap<T>],
    patches: usize,
    ridge: f64,
    seed: u64,
) -> Result<Vec<Preconditioner<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..net.depth())
        .map(|j| {
            let layer = &net.layers()[j];
            let count = patches.max(2 * layer.patch_dim() + 2);
            let raw = sample_layer_patches(net, j, layer.patch_size(), images, count, &mut rng)?;
            compute_preconditioner(&normalize_patch_columns(&raw), ridge)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Mean loss over the processed samples, before their update.
    pub mean_loss: f64,
    pub processed: usize,
    pub deactivated: usize,
}

/// One pass over the active samples in shuffled minibatches.
pub fn train_epoch_z<T: Real, K: TrainingTask<T>>(
    net: &mut NetworkParams<T>,
    task: &K,
    head: &LinearModel<T>,
    state: &mut TrainState<T>,
    preconditioners: &[Preconditioner<T>],
    options: &FitOptions,
) -> Result<EpochStats> {
    ensure!(options.batch_size > 0, InvalidArgument, "batch size must be positive");
    ensure!(
        preconditioners.len() == net.depth(),
        ShapeMismatch,
        "{} preconditioners for {} layers",
        preconditioners.len(),
        net.depth()
    );
    ensure!(
        state.active.len() == task.len(),
        ShapeMismatch,
        "active mask has {} entries for {} samples",
        state.active.len(),
        task.len()
    );
    let mut order: Vec<usize> = (0..task.len()).filter(|&i| state.active[i]).collect();
    order.shuffle(&mut state.rng);
    let eta = T::lit(state.eta);
    let mu = T::lit(state.momentum);
    let mut loss_sum = 0.0;
    let mut deactivated = 0;

    for batch in order.chunks(options.batch_size) {
        let samples: Vec<SampleGradient<T>> = batch
            .par_iter()
            .map(|&i| task.sample_gradient(net, head, i))
            .collect::<Result<_>>()?;
        let mut total = GradientSet::zeros_like(net);
        for (s, &i) in samples.iter().zip(batch) {
            loss_sum += s.loss;
            if !s.active {
                state.active[i] = false;
                deactivated += 1;
            }
            total.accumulate(&s.grads);
        }
        total.scale(T::one() / T::from_usize_lossy(batch.len()));

        for j in 0..net.depth() {
            let vel = &mut state.velocity[j];
            *vel *= mu;
            *vel += &total.filters[j];
            let layer = &net.layers()[j];
            let mut filters = layer.filters().clone();
            for (mut col, v) in filters.axis_iter_mut(Axis(1)).zip(vel.axis_iter(Axis(1))) {
                let stepped = sphere_step(&col.view(), &v, &preconditioners[j], eta)?;
                col.assign(&stepped);
            }
            let new_alpha = if options.learn_alpha {
                let av = &mut state.alpha_velocity[j];
                *av = state.momentum * *av + total.alpha[j].to_f64_lossy();
                Some((layer.kernel().alpha() - state.eta * options.alpha_rate * *av).max(MIN_ALPHA))
            } else {
                None
            };
            let layer = &mut net.layers_mut()[j];
            layer.set_filters(filters)?;
            if let Some(a) = new_alpha {
                layer.set_alpha(a)?;
            }
        }
    }
    let processed = order.len();
    Ok(EpochStats {
        mean_loss: if processed > 0 { loss_sum / processed as f64 } else { 0.0 },
        processed,
        deactivated,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub objective: f64,
    pub eta: f64,
    pub accepted: bool,
    pub active: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EpochLimit,
    ActiveSetEmpty,
    StepUnderflow,
}

#[derive(Debug, Clone)]
pub struct FitResult<T> {
    pub net: NetworkParams<T>,
    pub head: LinearModel<T>,
    pub objective: f64,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
}

impl<T> FitResult<T> {
    /// Objective values of the accepted epochs, in order.
    pub fn accepted_objectives(&self) -> Vec<f64> {
        self.history.iter().filter(|r| r.accepted).map(|r| r.objective).collect()
    }
}

/// Alternates head solves and filter epochs with backtracking on the
/// learning rate.
pub fn fit<T: Real, K: TrainingTask<T>>(
    net: NetworkParams<T>,
    task: &K,
    lambda: f64,
    options: &FitOptions,
) -> Result<FitResult<T>> {
    ensure!(!task.is_empty(), Data, "no training samples");
    let mut net = net;
    let mut seeds = ChaCha8Rng::seed_from_u64(options.seed);
    let preconditioners = if options.precondition && options.epochs > 0 {
        layer_preconditioners(
            &net,
            task.inputs(),
            options.preconditioner_patches,
            options.preconditioner_ridge,
            seeds.random(),
        )?
    } else {
        net.layers()
            .iter()
            .map(|l| Preconditioner::identity(l.patch_dim()))
            .collect()
    };
    let mut state = TrainState::new(&net, task.len(), options.eta, options.momentum, seeds.random())?;
    let (mut head, objective) = task.fit_head(&net, lambda, seeds.random())?;
    state.best_objective = objective;
    let mut history = vec![EpochRecord {
        epoch: 0,
        objective,
        eta: state.eta,
        accepted: true,
        active: state.active_count(),
    }];
    let mut stop = StopReason::EpochLimit;

    for epoch in 1..=options.epochs {
        state.epoch = epoch;
        let snapshot = net.clone();
        let step = train_epoch_z(&mut net, task, &head, &mut state, &preconditioners, options);
        let emptied = state.active_count() == 0;
        let candidate = match step {
            Ok(_) => Some(task.fit_head(&net, lambda, seeds.random())?),
            Err(CknError::StepDegenerate) => None,
            Err(e) => return Err(e),
        };
        let accepted = match candidate {
            Some((new_head, obj)) if obj.is_finite() && obj <= state.best_objective => {
                head = new_head;
                state.best_objective = obj;
                history.push(EpochRecord {
                    epoch,
                    objective: obj,
                    eta: state.eta,
                    accepted: true,
                    active: state.active_count(),
                });
                true
            }
            other => {
                net = snapshot;
                history.push(EpochRecord {
                    epoch,
                    objective: other.map_or(f64::NAN, |(_, o)| o),
                    eta: state.eta,
                    accepted: false,
                    active: state.active_count(),
                });
                state.eta *= 0.5;
                state.reset_momentum();
                false
            }
        };
        if emptied {
            stop = StopReason::ActiveSetEmpty;
            break;
        }
        if !accepted && state.eta < options.min_eta {
            stop = StopReason::StepUnderflow;
            break;
        }
        state.reactivate(options.reactivate);
    }
    Ok(FitResult {
        net,
        head,
        objective: state.best_objective,
        history,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::{LayerConfig, NetworkConfig};

    fn blobs(seed: u64, n: usize) -> (Vec<SpatialMap<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = i % 2;
            // horizontal versus vertical stripes with noise
            let img = SpatialMap::from_fn(1, 6, 6, |_, y, x| {
                let t = if label == 0 { y } else { x };
                (t % 2) as f64 + 0.05 * rng.random_range(-1.0..1.0)
            });
            images.push(img);
            labels.push(label);
        }
        (images, labels)
    }

    fn small_net(seed: u64) -> NetworkParams<f64> {
        let cfg = NetworkConfig {
            input_channels: 1,
            layers: vec![LayerConfig::new(3, 4, 2.0)],
        };
        NetworkParams::random(&cfg, seed).unwrap()
    }

    #[test]
    fn zero_epochs_is_one_convex_solve() {
        let (images, labels) = blobs(0, 20);
        let task = ClassificationTask::from_labels(images, &labels, 2, LossKind::SquaredHinge).unwrap();
        let net = small_net(0);
        let opts = FitOptions {
            epochs: 0,
            ..Default::default()
        };
        let res = fit(net.clone(), &task, 0.05, &opts).unwrap();
        assert_eq!(res.history.len(), 1);
        assert_eq!(res.net.layers()[0].filters(), net.layers()[0].filters());
        let (head, obj) = task.fit_head(&net, 0.05, 0).unwrap();
        assert!((obj - res.objective).abs() < 1e-9);
        assert_eq!(head.dim(), res.head.dim());
    }

    #[test]
    fn inactive_samples_leave_net_unchanged() {
        let (images, labels) = blobs(1, 10);
        let task = ClassificationTask::from_labels(images, &labels, 2, LossKind::SquaredHinge).unwrap();
        let mut net = small_net(1);
        let before = net.clone();
        let (head, _) = task.fit_head(&net, 0.1, 0).unwrap();
        let mut state = TrainState::new(&net, 10, 1.0, 0.9, 0).unwrap();
        state.active.iter_mut().for_each(|a| *a = false);
        let pre = vec![Preconditioner::identity(9)];
        let stats = train_epoch_z(&mut net, &task, &head, &mut state, &pre, &FitOptions::default()).unwrap();
        assert_eq!(stats.processed, 0);
        assert_eq!(net.layers()[0].filters(), before.layers()[0].filters());
    }

    #[test]
    fn accepted_objectives_never_increase_and_columns_stay_unit() {
        let (images, labels) = blobs(2, 40);
        let task = ClassificationTask::from_labels(images, &labels, 2, LossKind::SquaredHinge).unwrap();
        let opts = FitOptions {
            epochs: 8,
            batch_size: 8,
            eta: 10.0,
            preconditioner_patches: 500,
            ..Default::default()
        };
        let res = fit(small_net(2), &task, 1.0 / 40.0, &opts).unwrap();
        let acc = res.accepted_objectives();
        assert!(acc.windows(2).all(|w| w[1] <= w[0]), "{acc:?}");
        for l in res.net.layers() {
            for col in l.filters().axis_iter(Axis(1)) {
                assert!((col.dot(&col).sqrt() - 1.0).abs() < 1e-6);
            }
        }
    }
}
