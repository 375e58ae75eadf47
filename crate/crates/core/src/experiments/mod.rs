//! Twin and measurement-style experiment drivers on the toy tidal model.
//!
//! All drivers share one convention: surrogates and solvers work on
//! standardized parameters and states (see [`Scenario`]), while reports give
//! analyses in physical units and distances as standardized RMSE.

mod cell;
pub mod config;
mod measure;
pub mod metrics;
pub mod noise;
pub mod report;
pub mod scenario;
mod twin;

pub use config::{BootstrapSweep, ExperimentConfig, GridSweep, MeasureSweep, SingleRun, TwinSweep};
pub use measure::run_measurement;
pub use metrics::{rmse_by, rmse_global, relative_rmse_global, Standardizer};
pub use noise::{inject_noise, series_sigma, NoisyObservation};
pub use report::{ExperimentReport, ReportRow};
pub use scenario::Scenario;
pub use twin::{bootstrap_indices, run_assimilation, run_bootstrap, run_covariance_grid, run_twin};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of the compact JSON form of a configuration.
pub fn config_hash<T: Serialize>(config: &T) -> crate::Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}
