//! Supervised convolutional kernel networks.
//!
//! Layers encode image patches by projecting their kernel feature maps onto
//! the span of learned anchor points (Nystrom approximation), followed by
//! Gaussian pooling. Filters are initialized by spherical K-means, then
//! trained end to end with exact gradients and preconditioned SGD on the
//! sphere.

pub mod error;
pub mod grad;
pub mod gradcheck;
pub mod init;
pub mod io;
pub mod kernel;
pub mod layer;
pub mod maps;
pub mod optim;
pub mod scalar;
pub mod tasks;

pub use error::{CknError, Result};
pub use kernel::{inv_sqrt_psd, KernelKind, KernelSpec, WhiteningSet};
pub use layer::{
    encode_patch, layer_forward, network_apply, network_forward, network_kernel, LayerCache,
    LayerConfig, LayerParams, NetworkConfig, NetworkParams,
};
pub use maps::{
    column_norms, combine_patches, extract_patches, pool_adjoint, pool_forward, PatchMatrix,
    PoolOperator, PoolSpec, SpatialMap,
};
pub use scalar::Real;

pub type Map = SpatialMap<f64>;
pub type Map32 = SpatialMap<f32>;
pub type Network = NetworkParams<f64>;
pub type Network32 = NetworkParams<f32>;
pub type Layer = LayerParams<f64>;
pub type Layer32 = LayerParams<f32>;
