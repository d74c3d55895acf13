//! Central finite-difference checks of the analytic gradients.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};
use crate::grad::{loss_value_grad, network_backward, GradientSet, LossKind};
use crate::layer::{network_forward, LayerConfig, LayerParams, NetworkConfig, NetworkParams};
use crate::maps::SpatialMap;
use crate::optim::LinearModel;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub rel_tol: f64,
    /// Entries whose magnitude is below this are compared absolutely.
    pub abs_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-4,
            rel_tol: 1e-3,
            abs_floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Parameter {
    Filter { row: usize, col: usize },
    Alpha,
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub layer: usize,
    pub parameter: Parameter,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_error: f64,
    pub max_filter_error: f64,
    pub max_alpha_error: f64,
    pub passed: bool,
}

/// A labelled toy problem: a network, a fixed linear head and samples.
#[derive(Debug, Clone)]
pub struct ToyProblem {
    pub net: NetworkParams<f64>,
    pub model: LinearModel<f64>,
    pub images: Vec<SpatialMap<f64>>,
    /// `images.len() x outputs`.
    pub targets: Array2<f64>,
    pub loss: LossKind,
}

/// Two layers on 1x6x6 inputs: `e = 3`, `p = (4, 8)`, `s = (1, sqrt 2)`.
pub fn toy_problem(seed: u64, loss: LossKind, samples: usize) -> Result<ToyProblem> {
    let config = NetworkConfig {
        input_channels: 1,
        layers: vec![
            LayerConfig::new(3, 4, 1.0),
            LayerConfig::new(3, 8, std::f64::consts::SQRT_2),
        ],
    };
    let net = NetworkParams::<f64>::random(&config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let images: Vec<_> = (0..samples)
        .map(|_| SpatialMap::from_fn(1, 6, 6, |_, _, _| rng.random_range(-1.0..1.0)))
        .collect();
    let (oh, ow) = net.output_grid(6, 6);
    let dim = net.output_channels() * oh * ow;
    let outputs = 2;
    // small weights keep most hinge terms active
    let w = Array2::from_shape_fn((outputs, dim), |_| rng.random_range(-0.3..0.3));
    let model = LinearModel::new(w, 0.0)?;
    let targets = Array2::from_shape_fn((samples, outputs), |_| match loss {
        LossKind::Square => rng.random_range(-1.0..1.0),
        _ => {
            if rng.random_bool(0.5) {
                1.0
            } else {
                -1.0
            }
        }
    });
    Ok(ToyProblem {
        net,
        model,
        images,
        targets,
        loss,
    })
}

impl ToyProblem {
    /// `sum_i sum_c L(y_ic, <W_c, I_k(x_i)>)`.
    pub fn objective(&self, net: &NetworkParams<f64>) -> Result<f64> {
        let mut total = 0.0;
        for (i, img) in self.images.iter().enumerate() {
            let (feat, _) = network_forward(net, img, false)?;
            let pred = self.model.predict(&feat)?;
            for (c, &p) in pred.iter().enumerate() {
                total += loss_value_grad(self.loss, self.targets[[i, c]], p).0;
            }
        }
        Ok(total)
    }

    pub fn gradient(&self) -> Result<GradientSet<f64>> {
        let mut total = GradientSet::zeros_like(&self.net);
        for (i, img) in self.images.iter().enumerate() {
            let (feat, caches) = network_forward(&self.net, img, true)?;
            let pred = self.model.predict(&feat)?;
            let y = self.targets.row(i).to_vec();
            let g = network_backward(&self.net, &caches, &self.model, self.loss, &y, &pred.to_vec())?;
            total.accumulate(&g);
        }
        Ok(total)
    }
}

fn rebuild(layer: &LayerParams<f64>, filters: Array2<f64>, alpha: f64) -> Result<LayerParams<f64>> {
    LayerParams::with_raw_filters(
        filters,
        layer.kernel().with_alpha(alpha)?,
        layer.patch_size(),
        layer.in_channels(),
        layer.pool().copied(),
        layer.epsilon(),
    )
}

fn perturbed(net: &NetworkParams<f64>, j: usize, param: Parameter, delta: f64) -> Result<NetworkParams<f64>> {
    let mut layers = net.layers().to_vec();
    let layer = &layers[j];
    let mut filters = layer.filters().clone();
    let mut alpha = layer.kernel().alpha();
    match param {
        Parameter::Filter { row, col } => filters[[row, col]] += delta,
        Parameter::Alpha => alpha += delta,
    }
    layers[j] = rebuild(layer, filters, alpha)?;
    NetworkParams::new(net.input_channels(), layers)
}

fn compare(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < floor {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares every filter entry and every `alpha_j` against central
/// differences of the toy objective.
pub fn check_problem(problem: &ToyProblem, options: &GradCheckOptions) -> Result<GradCheckReport> {
    ensure!(options.step > 0.0, InvalidArgument, "step must be positive");
    let grads = problem.gradient()?;
    let h = options.step;
    let mut entries = Vec::new();
    for j in 0..problem.net.depth() {
        let (rows, cols) = problem.net.layers()[j].filters().dim();
        let mut params: Vec<Parameter> = (0..rows)
            .flat_map(|row| (0..cols).map(move |col| Parameter::Filter { row, col }))
            .collect();
        params.push(Parameter::Alpha);
        for param in params {
            let plus = problem.objective(&perturbed(&problem.net, j, param, h)?)?;
            let minus = problem.objective(&perturbed(&problem.net, j, param, -h)?)?;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = match param {
                Parameter::Filter { row, col } => grads.filters[j][[row, col]],
                Parameter::Alpha => grads.alpha[j],
            };
            entries.push(GradCheckEntry {
                layer: j,
                parameter: param,
                analytic,
                numeric,
                error: compare(analytic, numeric, options.abs_floor),
            });
        }
    }
    let max_of = |pred: &dyn Fn(&GradCheckEntry) -> bool| {
        entries
            .iter()
            .filter(|e| pred(e))
            .map(|e| e.error)
            .fold(0.0f64, f64::max)
    };
    let max_filter_error = max_of(&|e| matches!(e.parameter, Parameter::Filter { .. }));
    let max_alpha_error = max_of(&|e| e.parameter == Parameter::Alpha);
    let max_error = max_filter_error.max(max_alpha_error);
    Ok(GradCheckReport {
        passed: max_error < options.rel_tol && entries.iter().all(|e| e.error.is_finite()),
        entries,
        max_error,
        max_filter_error,
        max_alpha_error,
    })
}

/// The full suite: the toy network under the squared hinge and square
/// losses.
pub fn run_suite(seed: u64, options: &GradCheckOptions) -> Result<Vec<(LossKind, GradCheckReport)>> {
    [LossKind::SquaredHinge, LossKind::Square]
        .into_iter()
        .map(|loss| {
            let problem = toy_problem(seed, loss, 3)?;
            check_problem(&problem, options).map(|r| (loss, r))
        })
        .collect()
}
