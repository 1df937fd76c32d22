//! Patch-level TIL classifiers.
//!
//! A small CNN stack (convolution, pooling, dense, dropout) over
//! `matrixmultiply`, the reference architectures built from it, and the
//! training loop, augmentation and checkpoint format around them.

pub mod arch;
pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod elem;
pub mod error;
pub mod layers;
pub mod network;
pub mod optim;
pub mod preprocess;
pub mod tensor;
pub mod train;

pub use arch::Architecture;
pub use checkpoint::TrainedModel;
pub use config::{AugmentationConfig, ModelConfig, Preset};
pub use error::{ModelError, Result};
pub use network::Network;
pub use train::{train, train_on, LogEntry};
