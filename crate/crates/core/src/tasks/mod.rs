//! End-to-end pipelines: image classification and super-resolution, with
//! the resampling, color and quality-metric helpers they need.

pub mod classify;
pub mod color;
pub mod metrics;
pub mod resize;
pub mod sr;
pub mod synth;
pub mod whiten;

pub use classify::{
    evaluate_error, train_classifier, train_linear, ClassifierConfig, ClassifierHead, ClassifierOutcome,
};
pub use color::{rgb_to_ycbcr, ycbcr_to_rgb};
pub use metrics::{psnr, ssim};
pub use resize::bicubic_resize;
pub use sr::{build_sr_patchset, evaluate_sr, sr_train, sr_upscale, SrConfig, SrModel, SrPatchSet};
pub use whiten::{local_mean, LocalWhitening, WhiteningOptions};
