//! Dual-branch deblurring network, its training loop and checkpoints.

pub mod blocks;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod network;
pub mod ops;
pub mod params;
pub mod tensor;
pub mod training;

pub use blocks::{BlockKind, BlockSpec, Mode};
pub use error::{NetError, Result};
pub use network::{Network, NetworkConfig};
pub use tensor::Tensor;
