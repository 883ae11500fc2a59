//! Experiment orchestration for the `bayesnav` pipeline: the five-variant
//! model matrix, the track benchmark, held-out calibration, scene-class
//! uncertainty reports and the risk-guarded flight.

pub mod config;
pub mod error;
pub mod experiments;
pub mod io;
pub mod models;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use models::{ModelVariant, TrainedModels, VariantId};
