//! Observation-error covariance augmented with metamodel error:
//!
//! ```text
//! R̃ = R + 1/(n−1) · Φ̲ Λ̲ Φ̲ᵀ + Φ⁽ᵈ⁾ diag(λ_k v_k) Φ⁽ᵈ⁾ᵀ
//! ```
//!
//! where the first added term is the ensemble-anomaly covariance of the
//! discarded POD modes and `v_k` is the generalization error of mode `k`'s
//! expansion (`δ_k`, or `δ_k − b_k²` once the validation bias is removed).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{PodEnSurrogate, PodPceSurrogate};
use crate::linalg::{is_symmetric, symmetrize};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    R,
    RTilde,
    RTildeCorrected,
}

impl CovarianceKind {
    pub fn name(self) -> &'static str {
        match self {
            CovarianceKind::R => "r",
            CovarianceKind::RTilde => "r_tilde",
            CovarianceKind::RTildeCorrected => "r_tilde_corrected",
        }
    }
}

impl std::str::FromStr for CovarianceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "r" => Ok(CovarianceKind::R),
            "r_tilde" => Ok(CovarianceKind::RTilde),
            "r_tilde_corrected" => Ok(CovarianceKind::RTildeCorrected),
            other => Err(Error::invalid(format!("unknown covariance kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCovariance {
    pub matrix: DMatrix<f64>,
    pub kind: CovarianceKind,
    /// Truncation term `Φ̲ Λ̲ Φ̲ᵀ / (n−1)`.
    pub pod_term: DMatrix<f64>,
    /// Expansion term `Φ⁽ᵈ⁾ diag(λ_k v_k) Φ⁽ᵈ⁾ᵀ`.
    pub pce_term: DMatrix<f64>,
    /// Per-mode variances `v_k` used in the expansion term.
    pub mode_variances: DVector<f64>,
    /// Modes whose bias-corrected variance was negative and set to zero.
    pub floored_modes: Vec<usize>,
}

fn check_observation_covariance(r: &DMatrix<f64>, m: usize) -> Result<()> {
    if r.nrows() != m || r.ncols() != m {
        return Err(Error::dim(format!(
            "observation covariance is {}×{}, state dimension is {m}",
            r.nrows(),
            r.ncols()
        )));
    }
    let scale = r.diagonal().amax().max(f64::MIN_POSITIVE);
    if !is_symmetric(r, 1e-12 * scale) {
        return Err(Error::invalid("observation covariance is not symmetric"));
    }
    Ok(())
}

/// `Σ_k w_k φ_k φ_kᵀ` for the columns of `phi`.
fn weighted_gram(phi: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = phi.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= w[k];
    }
    symmetrize(&(scaled * phi.transpose()))
}

/// Assembles `R̃` from explicit blocks. `retained_variances` holds `v_k`.
pub fn assemble_error_covariance(
    r: &DMatrix<f64>,
    retained_modes: &DMatrix<f64>,
    retained_eigenvalues: &DVector<f64>,
    complement_modes: &DMatrix<f64>,
    complement_eigenvalues: &DVector<f64>,
    n_members: usize,
    retained_variances: &DVector<f64>,
    kind: CovarianceKind,
) -> Result<ErrorCovariance> {
    let m = retained_modes.nrows();
    check_observation_covariance(r, m)?;
    if n_members < 2 {
        return Err(Error::invalid("ensemble needs at least 2 members"));
    }
    if complement_modes.nrows() != m
        || retained_eigenvalues.len() != retained_modes.ncols()
        || retained_variances.len() != retained_modes.ncols()
        || complement_eigenvalues.len() != complement_modes.ncols()
    {
        return Err(Error::dim("inconsistent covariance blocks".to_string()));
    }
    let pod_term = weighted_gram(
        complement_modes,
        &(complement_eigenvalues / (n_members as f64 - 1.0)),
    );
    let pce_term = weighted_gram(
        retained_modes,
        &retained_eigenvalues.component_mul(retained_variances),
    );
    let matrix = symmetrize(&(r + &pod_term + &pce_term));
    Ok(ErrorCovariance {
        matrix,
        kind,
        pod_term,
        pce_term,
        mode_variances: retained_variances.clone(),
        floored_modes: Vec::new(),
    })
}

fn assemble_for(
    s: &PodPceSurrogate,
    r: &DMatrix<f64>,
    variances: DVector<f64>,
    kind: CovarianceKind,
) -> Result<ErrorCovariance> {
    let (kept, dropped) = s.basis().split();
    assemble_error_covariance(
        r,
        &kept.modes,
        &kept.singular_values.map(|v| v * v),
        &dropped.modes,
        &dropped.singular_values.map(|v| v * v),
        s.ensemble_size(),
        &variances,
        kind,
    )
}

/// `R̃` using the validation mean squared error of each mode's expansion.
pub fn metamodel_error_covariance(s: &PodPceSurrogate, r: &DMatrix<f64>) -> Result<ErrorCovariance> {
    assemble_for(s, r, s.pce().empirical_errors().clone(), CovarianceKind::RTilde)
}

/// `R̃` with each mode's variance `δ_k − b_k²` where `b_k` is the validation
/// bias. Negative variances are set to zero and reported in `floored_modes`.
pub fn corrected_error_covariance(
    s: &PodPceSurrogate,
    r: &DMatrix<f64>,
    validation_bias: &DVector<f64>,
) -> Result<ErrorCovariance> {
    let delta = s.pce().empirical_errors();
    if validation_bias.len() != delta.len() {
        return Err(Error::dim(format!(
            "{} bias values for {} modes",
            validation_bias.len(),
            delta.len()
        )));
    }
    let mut floored = Vec::new();
    let variances = DVector::from_fn(delta.len(), |k, _| {
        let v = delta[k] - validation_bias[k] * validation_bias[k];
        if v < 0.0 {
            if v < -1e-12 * delta[k] {
                floored.push(k);
            }
            0.0
        } else {
            v
        }
    });
    let mut out = assemble_for(s, r, variances, CovarianceKind::RTildeCorrected)?;
    out.floored_modes = floored;
    Ok(out)
}

/// Truncation-only `R̃` for the joint parameter/state surrogate, built from
/// the state rows of the discarded joint modes.
pub fn poden_error_covariance(s: &PodEnSurrogate, r: &DMatrix<f64>) -> Result<ErrorCovariance> {
    let (_, dropped) = s.basis().split();
    let m_x = s.param_dim();
    let phi_y = dropped.modes.rows(m_x, s.state_dim()).into_owned();
    let d = s.rank();
    assemble_error_covariance(
        r,
        &DMatrix::zeros(s.state_dim(), d),
        &DVector::zeros(d),
        &phi_y,
        &dropped.singular_values.map(|v| v * v),
        s.basis().n_members(),
        &DVector::zeros(d),
        CovarianceKind::RTilde,
    )
}
