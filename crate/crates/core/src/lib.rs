//! Surrogate-based variational data assimilation.
//!
//! The crate builds reduced-order surrogates of an expensive forward model from
//! an ensemble of runs and uses them inside a 3DVAR parameter calibration:
//!
//! * [`pod`]: snapshot Proper Orthogonal Decomposition with EVR truncation.
//! * [`pce`]: orthonormal polynomial chaos with sparse LARS regression,
//!   corrected leave-one-out model choice and validation-based degree selection.
//! * [`surrogate`]: the linear joint parameter/state POD surrogate (PODEn), the
//!   nonlinear POD-PCE surrogate and the metamodel-aware error covariance.
//! * [`assimilate`]: cost functions, a projected limited-memory quasi-Newton
//!   minimizer and the three solvers (classical, PODEn closed form, POD-PCE).
//! * [`toymodel`]: a cheap synthetic tidal model used for twin experiments.
//! * [`experiments`]: twin / covariance-grid / bootstrap / measurement drivers.
//! * [`io`] and [`config`]: persistence and run configuration.
//!
//! Ensemble propagation, per-mode fits and sweep cells run on rayon when the
//! `parallel` feature is enabled (the default) and sequentially otherwise.

pub mod assimilate;
pub mod config;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod pce;
pub mod pod;
pub mod rng;
pub mod surrogate;
pub mod toymodel;

pub use error::{Error, Result};

/// Crate version recorded in output provenance lines.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
