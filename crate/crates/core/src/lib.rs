//! Multi-stream sensor-attention network for wearable gait recordings,
//! with the training protocol, imbalance-robust evaluation, and an
//! attention-based dataset audit that flags laterality confounds.

pub mod audit;
pub mod data;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod model;
pub mod ndgrad;
pub mod train;

pub use error::{Error, Result};
