//! Optimization: the linear head, the filter updates and the training loop.

pub mod model;
pub mod precond;
pub mod solver;
pub mod sphere;
pub mod trainer;

pub use model::{flatten, LinearModel};
pub use precond::{compute_preconditioner, Preconditioner};
pub use solver::{solve_w_convex, Solution, SolverMethod, SolverOptions};
pub use sphere::{sphere_step, tangent_direction};
pub use trainer::{
    feature_rows, fit, one_vs_all, layer_preconditioners, train_epoch_z, ClassificationTask, EpochRecord,
    EpochStats, FitOptions, FitResult, SampleGradient, StopReason, TrainState, TrainingTask,
};
