//! 3DVAR cost functions and solvers.
//!
//! ```text
//! J(x) = ½ (x − x_b)ᵀ B⁻¹ (x − x_b) + ½ (G(x) − y_o)ᵀ R⁻¹ (G(x) − y_o)
//! ```
//!
//! `G` is either the forward model (classical 3DVAR, gradient by finite
//! differences), the linear joint-POD surrogate (closed-form analysis) or the
//! POD-PCE surrogate (analytic gradient).

mod optimizer;
mod problem;
mod solvers;

pub use optimizer::{bounded_quasi_newton, OptimResult, OptimizerConfig, TraceEntry};
pub use problem::{cost_3dvar, AssimilationProblem};
pub use solvers::{
    solve_classical_3dvar, solve_poden3dvar, solve_podpce3dvar, AnalysisResult, FiniteDifference,
    PodEnCost, PodEnMethod, PodEnOptions, PodPceCost, SolverKind,
};
