pub mod augmentation;
pub mod baseline;
pub mod dataset;
pub mod error;
pub mod image;
pub mod kernels;
pub mod metrics;
pub mod scenes;
pub mod synthesis;

pub use error::{Error, FormatError, Result};
pub use image::ImageGrid;
pub use kernels::{BlurField, BlurScaleSet, DiskKernel, FieldPatternSpec, KernelBank};
