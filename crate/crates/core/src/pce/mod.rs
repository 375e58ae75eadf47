//! Orthonormal polynomial chaos expansions fitted by sparse regression.

mod basis;
mod lars;
mod model;

pub use basis::{
    design_matrix, multi_index_set, univariate_derivative, univariate_eval, univariate_table,
    Family, InputTransform, MultiIndex,
};
pub use lars::{fit_lars, LarsFit, PathModel};
pub use model::{select_degree, train_validation_split, DegreeSelection, PceConfig, PceModel};
