//! HTTP service behind the threshold-review UI: browse TIL maps, preview a
//! threshold, inspect boundary patches, and commit a threshold as a
//! semi-automatic annotation manifest.

pub mod api;
pub mod error;
pub mod preview;
pub mod store;

pub use api::{router, serve};
pub use error::{ReviewError, Result};
pub use store::{Store, StoreConfig};
