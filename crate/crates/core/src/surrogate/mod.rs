//! Reduced-order surrogates of a forward model and their error covariance.
//!
//! Ensembles are passed as matrices whose columns are members: parameters are
//! `m_x × n`, states `m_y × n`.

mod covariance;
mod poden;
mod podpce;

pub use covariance::{
    assemble_error_covariance, corrected_error_covariance, metamodel_error_covariance,
    poden_error_covariance, CovarianceKind, ErrorCovariance,
};
pub use poden::{build_poden, PodEnSurrogate};
pub use podpce::{build_podpce, build_podpce_from_basis, PodPceSurrogate};

use nalgebra::DMatrix;

use crate::{Error, Result};

pub(crate) fn check_ensemble(params: &DMatrix<f64>, states: &DMatrix<f64>) -> Result<()> {
    if params.ncols() != states.ncols() {
        return Err(Error::dim(format!(
            "{} parameter members but {} state members",
            params.ncols(),
            states.ncols()
        )));
    }
    if params.ncols() < 2 {
        return Err(Error::invalid(format!(
            "ensemble needs at least 2 members, got {}",
            params.ncols()
        )));
    }
    Ok(())
}
