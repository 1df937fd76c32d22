//! Core data model and pure operations for TIL (tumor infiltrating lymphocyte)
//! mapping over whole slide images.
//!
//! The crate covers everything that does not need a neural network:
//! slide tiling, annotation manifests and the semi-automatic harvester,
//! ROC-based threshold calibration, TIL map files, map inference driven by
//! any [`inference::PatchScorer`], and patch/region evaluation.

pub mod annotation;
pub mod calibration;
pub mod cancer;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod registry;
pub mod synthetic;
pub mod tiling;
pub mod tilmap;

pub use cancer::CancerType;
pub use error::{Result, TilError};
