//! Snapshot Proper Orthogonal Decomposition.
//!
//! A snapshot matrix `U` (m state components × n ensemble members) is centered
//! on its ensemble mean and factorized as `U = Ū + Φ Σ Nᵀ`, with `Φ` the
//! orthonormal modes, `Σ` the singular values (eigenvalues `λ = σ²`) and `N`
//! the orthonormal expansion coefficients of every member.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{first_non_finite, thin_svd};
use crate::{Error, Result};

/// Relative threshold below which a singular value is treated as zero.
pub const ZERO_SINGULAR_VALUE_RTOL: f64 = 1e-12;

/// Ensemble of state vectors stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    data: DMatrix<f64>,
    row_labels: Vec<String>,
    member_ids: Vec<String>,
}

impl SnapshotMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let row_labels = (0..data.nrows()).map(|i| format!("r{i}")).collect();
        let member_ids = (0..data.ncols()).map(|j| format!("m{j}")).collect();
        Self::with_labels(data, row_labels, member_ids)
    }

    pub fn with_labels(
        data: DMatrix<f64>,
        row_labels: Vec<String>,
        member_ids: Vec<String>,
    ) -> Result<Self> {
        if data.nrows() < 1 {
            return Err(Error::invalid("snapshot matrix needs at least one row"));
        }
        if data.ncols() < 2 {
            return Err(Error::invalid(format!(
                "snapshot matrix needs at least 2 members, got {}",
                data.ncols()
            )));
        }
        if let Some((row, col)) = first_non_finite(&data) {
            return Err(Error::NonFinite { row, col });
        }
        if row_labels.len() != data.nrows() || member_ids.len() != data.ncols() {
            return Err(Error::dim(format!(
                "{} row labels and {} member ids for a {}x{} matrix",
                row_labels.len(),
                member_ids.len(),
                data.nrows(),
                data.ncols()
            )));
        }
        Ok(Self {
            data,
            row_labels,
            member_ids,
        })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn member_ids(&self) -> &[String] {
        &self.member_ids
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }
}

/// How many modes to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    Modes(usize),
    /// Smallest rank whose explained variance rate reaches the threshold.
    EvrThreshold(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    pub(crate) mean: DVector<f64>,
    pub(crate) modes: DMatrix<f64>,
    pub(crate) singular_values: DVector<f64>,
    pub(crate) coefficients: DMatrix<f64>,
    pub(crate) retained: usize,
}

/// Leading `d` modes of a basis.
#[derive(Debug, Clone)]
pub struct RetainedBlock {
    pub modes: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub coefficients: DMatrix<f64>,
}

/// Discarded modes `d+1..e`.
#[derive(Debug, Clone)]
pub struct ComplementBlock {
    pub modes: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub coefficients: DMatrix<f64>,
}

/// Factorizes a snapshot matrix. The returned basis retains every mode.
pub fn fit_pod(snapshots: &SnapshotMatrix) -> Result<PodBasis> {
    let u = snapshots.data();
    let (m, n) = (u.nrows(), u.ncols());
    let mean = u.column_mean();
    let mut centered = u.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }

    let (left, sv, right_t) = thin_svd(&centered)?;
    let e = m.min(n);

    let mut order: Vec<usize> = (0..e).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let sigma_max = order
        .first()
        .map(|&k| sv[k])
        .unwrap_or(0.0);
    let cutoff = ZERO_SINGULAR_VALUE_RTOL * sigma_max;

    let mut modes = DMatrix::zeros(m, e);
    let mut singular_values = DVector::zeros(e);
    let mut coefficients = DMatrix::zeros(n, e);
    for (k, &src) in order.iter().enumerate() {
        let mut phi = left.column(src).into_owned();
        let mut nu = right_t.row(src).transpose();
        // Deterministic sign: largest-magnitude entry of each mode is positive.
        let pivot = phi.iamax();
        if phi[pivot] < 0.0 {
            phi.neg_mut();
            nu.neg_mut();
        }
        modes.set_column(k, &phi);
        let s = sv[src];
        if s > cutoff && s > 0.0 {
            singular_values[k] = s;
            coefficients.set_column(k, &nu);
        }
    }

    Ok(PodBasis {
        mean,
        modes,
        singular_values,
        coefficients,
        retained: e,
    })
}

impl PodBasis {
    /// Assembles a basis from its parts; used when loading persisted bases.
    pub fn from_parts(
        mean: DVector<f64>,
        modes: DMatrix<f64>,
        singular_values: DVector<f64>,
        coefficients: DMatrix<f64>,
        retained: usize,
    ) -> Result<Self> {
        let e = singular_values.len();
        if modes.nrows() != mean.len() || modes.ncols() != e || coefficients.ncols() != e {
            return Err(Error::dim("inconsistent POD basis blocks"));
        }
        if retained == 0 || retained > e {
            return Err(Error::invalid(format!("retained rank {retained} outside 1..={e}")));
        }
        Ok(Self {
            mean,
            modes,
            singular_values,
            coefficients,
            retained,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        self.singular_values.map(|s| s * s)
    }

    /// `N` (members × modes).
    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn retained(&self) -> usize {
        self.retained
    }

    /// Full rank `e = min(m, n)`.
    pub fn full_rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn state_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_members(&self) -> usize {
        self.coefficients.nrows()
    }

    /// Number of singular values above the zero threshold.
    pub fn numerical_rank(&self) -> usize {
        self.singular_values.iter().filter(|s| **s > 0.0).count()
    }

    /// Explained variance rate of the first `d` modes.
    pub fn evr(&self, d: usize) -> Result<f64> {
        let e = self.full_rank();
        if d == 0 || d > e {
            return Err(Error::invalid(format!("EVR rank {d} outside 1..={e}")));
        }
        let lambda = self.eigenvalues();
        let total = lambda.sum();
        if total <= 0.0 {
            return Err(Error::invalid(
                "explained variance rate is undefined for an all-zero spectrum",
            ));
        }
        if d == e {
            return Ok(1.0);
        }
        Ok(lambda.rows(0, d).sum() / total)
    }

    /// Rank selected by a truncation criterion.
    pub fn rank_for(&self, criterion: Truncation) -> Result<usize> {
        let e = self.full_rank();
        match criterion {
            Truncation::Modes(d) => {
                if d == 0 || d > e {
                    Err(Error::invalid(format!("cannot retain {d} modes out of {e}")))
                } else {
                    Ok(d)
                }
            }
            Truncation::EvrThreshold(tau) => {
                if !(tau > 0.0 && tau <= 1.0) {
                    return Err(Error::invalid(format!("EVR threshold {tau} outside (0, 1]")));
                }
                for d in 1..=e {
                    if self.evr(d)? >= tau - 1e-12 {
                        return Ok(d);
                    }
                }
                Ok(e)
            }
        }
    }

    /// Same decomposition with a new retained rank.
    pub fn truncate(&self, criterion: Truncation) -> Result<PodBasis> {
        let d = self.rank_for(criterion)?;
        let mut out = self.clone();
        out.retained = d;
        Ok(out)
    }

    pub fn split(&self) -> (RetainedBlock, ComplementBlock) {
        let d = self.retained;
        let e = self.full_rank();
        (
            RetainedBlock {
                modes: self.modes.columns(0, d).into_owned(),
                singular_values: self.singular_values.rows(0, d).into_owned(),
                coefficients: self.coefficients.columns(0, d).into_owned(),
            },
            ComplementBlock {
                modes: self.modes.columns(d, e - d).into_owned(),
                singular_values: self.singular_values.rows(d, e - d).into_owned(),
                coefficients: self.coefficients.columns(d, e - d).into_owned(),
            },
        )
    }

    pub fn retained_modes(&self) -> nalgebra::DMatrixView<'_, f64> {
        self.modes.columns(0, self.retained)
    }

    pub fn retained_singular_values(&self) -> nalgebra::DVectorView<'_, f64> {
        self.singular_values.rows(0, self.retained)
    }

    /// `Φ⁽ᵈ⁾ Σ⁽ᵈ⁾`, the map from reduced coordinates to state anomalies.
    pub fn scaled_modes(&self) -> DMatrix<f64> {
        let mut out = self.retained_modes().into_owned();
        for (k, mut col) in out.column_iter_mut().enumerate() {
            col *= self.singular_values[k];
        }
        out
    }

    /// Reduced coordinates `ν = Σ⁻¹ Φᵀ (y − Ū)` on the retained block.
    pub fn project(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.state_dim() {
            return Err(Error::dim(format!(
                "state has length {}, basis expects {}",
                y.len(),
                self.state_dim()
            )));
        }
        let d = self.retained;
        if let Some(k) = (0..d).find(|&k| self.singular_values[k] == 0.0) {
            return Err(Error::Singular(format!(
                "retained mode {} has a zero singular value; reduce the retained rank",
                k + 1
            )));
        }
        let anomaly = y - &self.mean;
        let mut nu = self.retained_modes().tr_mul(&anomaly);
        for k in 0..d {
            nu[k] /= self.singular_values[k];
        }
        Ok(nu)
    }

    /// `Ū + Φ⁽ᵈ⁾ Σ⁽ᵈ⁾ ν`.
    pub fn reconstruct(&self, nu: &DVector<f64>) -> Result<DVector<f64>> {
        if nu.len() != self.retained {
            return Err(Error::dim(format!(
                "reduced vector has length {}, basis retains {}",
                nu.len(),
                self.retained
            )));
        }
        let scaled = nu.component_mul(&self.retained_singular_values());
        Ok(&self.mean + self.retained_modes() * scaled)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rotation(theta: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
    }

    #[test]
    fn constant_columns_have_zero_spectrum() {
        let col = DVector::from_vec(vec![1.0, -2.0, 3.5]);
        let u = DMatrix::from_columns(&[col.clone(), col.clone(), col.clone(), col.clone()]);
        let basis = fit_pod(&SnapshotMatrix::new(u.clone()).unwrap()).unwrap();
        assert_eq!(basis.mean(), &col);
        assert!(basis.singular_values().iter().all(|s| *s == 0.0));
        assert!(basis.evr(1).is_err());
        let rebuilt = basis.truncate(Truncation::Modes(3)).unwrap();
        assert_eq!(rebuilt.reconstruct(&DVector::zeros(3)).unwrap(), col);
    }

    #[test]
    fn recovers_planted_two_by_two_spectrum() {
        // Centered part Φ diag(3,1) Nᵀ needs mean-zero columns of Nᵀ, so use
        // four members: N = [a, -a, b, -b] / norms.
        let phi = rotation(0.3);
        let n = DMatrix::from_row_slice(
            4,
            2,
            &[0.5, 0.5, -0.5, -0.5, 0.5, -0.5, -0.5, 0.5],
        );
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let mean = DVector::from_vec(vec![10.0, -4.0]);
        let mut u = &phi * sigma * n.transpose();
        for mut c in u.column_iter_mut() {
            c += &mean;
        }
        let basis = fit_pod(&SnapshotMatrix::new(u.clone()).unwrap()).unwrap();
        assert_relative_eq!(basis.singular_values()[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(basis.singular_values()[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(basis.evr(1).unwrap(), 0.9, epsilon = 1e-12);
        assert_eq!(basis.rank_for(Truncation::EvrThreshold(0.85)).unwrap(), 1);
        assert_eq!(basis.rank_for(Truncation::EvrThreshold(0.95)).unwrap(), 2);
    }

    #[test]
    fn rank_one_mode_matches_planted_direction() {
        let phi = DVector::from_vec(vec![0.6, 0.0, -0.8]);
        let nu = DVector::from_vec(vec![1.0, -1.0, 2.0, -2.0]);
        let u = &phi * nu.transpose() * 5.0;
        let basis = fit_pod(&SnapshotMatrix::new(u).unwrap()).unwrap();
        assert_relative_eq!(basis.singular_values()[0], 5.0 * nu.norm(), epsilon = 1e-10);
        assert_eq!(basis.numerical_rank(), 1);
        let mode = basis.modes().column(0);
        // sign convention: largest |entry| positive, so the mode is -phi
        assert_relative_eq!((mode + &phi).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn evr_examples() {
        let basis = PodBasis::from_parts(
            DVector::zeros(3),
            DMatrix::identity(3, 3),
            DVector::from_vec(vec![2.0, 2.0, 0.0]),
            DMatrix::zeros(4, 3),
            3,
        )
        .unwrap();
        assert_relative_eq!(basis.evr(1).unwrap(), 0.5);
        assert_eq!(basis.evr(3).unwrap(), 1.0);
        assert!(basis.truncate(Truncation::Modes(4)).is_err());
        let t = basis.truncate(Truncation::Modes(3)).unwrap();
        assert!(matches!(t.project(&DVector::zeros(3)), Err(Error::Singular(_))));
    }

    #[test]
    fn truncation_splits_blocks() {
        let basis = PodBasis::from_parts(
            DVector::zeros(6),
            DMatrix::identity(6, 5),
            DVector::from_vec(vec![5.0, 4.0, 3.0, 2.0, 1.0]),
            DMatrix::zeros(7, 5),
            5,
        )
        .unwrap()
        .truncate(Truncation::Modes(2))
        .unwrap();
        let (keep, rest) = basis.split();
        assert_eq!(keep.modes.ncols(), 2);
        assert_eq!(rest.modes.ncols(), 3);
        assert_eq!(rest.singular_values[0], 3.0);
    }

    #[test]
    fn project_examples() {
        let phi = rotation(0.7);
        let basis = PodBasis::from_parts(
            DVector::from_vec(vec![1.0, 2.0]),
            phi.clone(),
            DVector::from_vec(vec![3.0, 1.0]),
            DMatrix::zeros(4, 2),
            2,
        )
        .unwrap();
        let mean = basis.mean().clone();
        assert_eq!(basis.project(&mean).unwrap(), DVector::zeros(2));
        let y = &mean + phi.column(0) * 3.0;
        let nu = basis.project(&y).unwrap();
        assert_relative_eq!(nu[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(nu[1], 0.0, epsilon = 1e-14);
        assert!(basis.project(&DVector::zeros(3)).is_err());
        assert!(basis.reconstruct(&DVector::zeros(1)).is_err());
    }

    #[test]
    fn rejects_bad_snapshots() {
        assert!(SnapshotMatrix::new(DMatrix::zeros(3, 1)).is_err());
        let mut u = DMatrix::zeros(3, 4);
        u[(2, 1)] = f64::NAN;
        match SnapshotMatrix::new(u) {
            Err(Error::NonFinite { row, col }) => assert_eq!((row, col), (2, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
