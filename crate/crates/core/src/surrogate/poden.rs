use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView};

use super::check_ensemble;
use crate::pod::{fit_pod, PodBasis, SnapshotMatrix, Truncation};
use crate::{Error, Result};

/// Linear surrogate from a POD of stacked parameter/state members:
/// `[x; y] ≈ [x̄; ȳ] + [Φ_x; Φ_y] Σ ν`.
#[derive(Debug, Clone, PartialEq)]
pub struct PodEnSurrogate {
    pub(crate) basis: PodBasis,
    pub(crate) m_x: usize,
}

pub fn build_poden(
    params: &DMatrix<f64>,
    states: &DMatrix<f64>,
    criterion: Truncation,
) -> Result<PodEnSurrogate> {
    check_ensemble(params, states)?;
    let (m_x, m_y, n) = (params.nrows(), states.nrows(), params.ncols());
    let mut joint = DMatrix::zeros(m_x + m_y, n);
    joint.rows_mut(0, m_x).copy_from(params);
    joint.rows_mut(m_x, m_y).copy_from(states);
    let basis = fit_pod(&SnapshotMatrix::new(joint)?)?.truncate(criterion)?;
    Ok(PodEnSurrogate { basis, m_x })
}

impl PodEnSurrogate {
    pub fn from_basis(basis: PodBasis, m_x: usize) -> Result<Self> {
        if m_x == 0 || m_x >= basis.state_dim() {
            return Err(Error::invalid(format!(
                "parameter block size {m_x} incompatible with joint dimension {}",
                basis.state_dim()
            )));
        }
        Ok(PodEnSurrogate { basis, m_x })
    }

    pub fn basis(&self) -> &PodBasis {
        &self.basis
    }

    pub fn param_dim(&self) -> usize {
        self.m_x
    }

    pub fn state_dim(&self) -> usize {
        self.basis.state_dim() - self.m_x
    }

    pub fn rank(&self) -> usize {
        self.basis.retained()
    }

    pub fn with_rank(&self, criterion: Truncation) -> Result<Self> {
        Ok(PodEnSurrogate {
            basis: self.basis.truncate(criterion)?,
            m_x: self.m_x,
        })
    }

    pub fn mean_x(&self) -> DVectorView<'_, f64> {
        self.basis.mean().rows(0, self.m_x)
    }

    pub fn mean_y(&self) -> DVectorView<'_, f64> {
        self.basis.mean().rows(self.m_x, self.state_dim())
    }

    pub fn phi_x(&self) -> DMatrixView<'_, f64> {
        self.basis.modes().view((0, 0), (self.m_x, self.rank()))
    }

    pub fn phi_y(&self) -> DMatrixView<'_, f64> {
        self.basis.modes().view((self.m_x, 0), (self.state_dim(), self.rank()))
    }

    pub fn sigma(&self) -> DVectorView<'_, f64> {
        self.basis.retained_singular_values()
    }

    /// `(Φ_x Σ, Φ_y Σ)`.
    pub fn scaled_blocks(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let scaled = self.basis.scaled_modes();
        (
            scaled.rows(0, self.m_x).into_owned(),
            scaled.rows(self.m_x, self.state_dim()).into_owned(),
        )
    }

    pub fn predict(&self, nu: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let joint = self.basis.reconstruct(nu)?;
        Ok((
            joint.rows(0, self.m_x).into_owned(),
            joint.rows(self.m_x, self.state_dim()).into_owned(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Substream};
    use rand::Rng;

    fn random(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream(seed, Substream::Test);
        DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn linear_states_have_one_dominant_direction() {
        let x = DMatrix::from_fn(1, 30, |_, j| j as f64 / 29.0);
        let a = DVector::from_vec(vec![2.0, -1.0, 0.5, 3.0]);
        let b = DVector::from_vec(vec![1.0, 1.0, 0.0, -2.0]);
        let y = DMatrix::from_fn(4, 30, |i, j| a[i] * x[(0, j)] + b[i]);
        let s = build_poden(&x, &y, Truncation::Modes(1)).unwrap();
        assert!(s.basis().evr(1).unwrap() >= 0.999);
    }

    #[test]
    fn constant_parameters_give_empty_parameter_block() {
        let x = DMatrix::from_element(2, 10, 0.3);
        let y = random(5, 10, 1);
        let s = build_poden(&x, &y, Truncation::Modes(3)).unwrap();
        assert!(s.phi_x().amax() < 1e-12);
    }

    #[test]
    fn full_rank_reproduces_members() {
        let x = random(3, 8, 2);
        let y = random(6, 8, 3);
        let s = build_poden(&x, &y, Truncation::Modes(8)).unwrap();
        let nu = s.basis().coefficients().row(5).transpose();
        // The rank-(n−1) centered matrix leaves one zero mode, whose coefficient
        // column is zero, so the reconstruction still reproduces the member.
        let (px, py) = s.predict(&nu).unwrap();
        assert!((px - x.column(5)).amax() < 1e-10);
        assert!((py - y.column(5)).amax() < 1e-10);
        assert_eq!(s.predict(&DVector::zeros(8)).unwrap().0, s.mean_x().into_owned());
    }

    #[test]
    fn prediction_is_affine() {
        let s = build_poden(&random(2, 12, 4), &random(7, 12, 5), Truncation::Modes(4)).unwrap();
        let n1 = DVector::from_vec(vec![0.3, -0.2, 0.1, 0.5]);
        let n2 = DVector::from_vec(vec![-0.4, 0.7, 0.0, 0.2]);
        let t = 0.37;
        let mid = &n1 * (1.0 - t) + &n2 * t;
        let (_, y1) = s.predict(&n1).unwrap();
        let (_, y2) = s.predict(&n2).unwrap();
        let (_, ym) = s.predict(&mid).unwrap();
        assert!((ym - (y1 * (1.0 - t) + y2 * t)).amax() < 1e-12);
    }
}
