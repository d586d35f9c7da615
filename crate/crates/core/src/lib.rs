//! Traffic counts, Local Authority AADT and road-transport greenhouse-gas
//! emissions from vehicle detections in satellite imagery.
//!
//! The crate is organised as one module per pipeline stage:
//!
//! - [`ingest`]: input file formats and their validation
//! - [`speed`]: live mean speed from the lag between two spectral bands
//! - [`counts`]: vehicle length classes and fifteen-minute flow estimates
//! - [`aadt`]: feature scaling and the feed-forward AADT regressor
//! - [`emissions`]: vehicle-kilometres, fuel and CO2e per vehicle type
//! - [`metrics`]: RMSE, MAPE, R² and report tables
//! - [`synth`]: deterministic synthetic fixtures
//! - [`pipeline`]: the train / predict / evaluate / speed / synth commands

pub mod aadt;
pub mod counts;
pub mod emissions;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod speed;
pub mod synth;

pub use error::{Error, Result};
