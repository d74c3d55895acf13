//! Dataset readers, image files, configuration and checkpoints.

pub mod checkpoint;
pub mod cifar;
pub mod config;
pub mod images;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, Head};
pub use cifar::{load_cifar10, load_cifar10_file, parse_cifar10, Split};
pub use config::Config;
pub use images::{list_images, load_image_folder, read_image, write_image};
