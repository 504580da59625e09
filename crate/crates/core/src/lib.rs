//! Computational core for cross-camera RAW-to-RAW work: frame normalization
//! and packing, sensor noise profiling, global calibration baselines,
//! evaluation metrics and aligned patch-pair construction.

pub mod calibration;
pub mod error;
pub mod metrics;
pub mod noise;
pub mod pairing;
pub mod plane;
pub mod raw;

pub use error::{Error, Result};
pub use plane::Plane;
pub use raw::{CameraMeta, RawFrame, RawMosaic, CHANNELS};
