use nalgebra::{DMatrix, DVector};

use super::check_ensemble;
use crate::exec::Execution;
use crate::pce::{select_degree, train_validation_split, InputTransform, PceConfig, PceModel};
use crate::pod::{fit_pod, PodBasis, SnapshotMatrix, Truncation};
use crate::{Error, Result};

/// `G̃(x) = ȳ + Φ⁽ᵈ⁾ Σ⁽ᵈ⁾ ν̃(x)` with one polynomial chaos expansion per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct PodPceSurrogate {
    pub(crate) basis: PodBasis,
    pub(crate) pce: PceModel,
}

/// Fits the state POD, keeps the rank given by `criterion` and learns each
/// retained coefficient from the parameters on a seeded training/validation
/// split of the members.
pub fn build_podpce(
    params: &DMatrix<f64>,
    states: &DMatrix<f64>,
    criterion: Truncation,
    transforms: &[InputTransform],
    config: &PceConfig,
    split_seed: u64,
    exec: Execution,
) -> Result<PodPceSurrogate> {
    check_ensemble(params, states)?;
    config.validate()?;
    if transforms.len() != params.nrows() {
        return Err(Error::dim(format!(
            "{} input transforms for {} parameters",
            transforms.len(),
            params.nrows()
        )));
    }
    let basis = fit_pod(&SnapshotMatrix::new(states.clone())?)?;
    build_podpce_from_basis(params, &basis, criterion, transforms, config, split_seed, exec)
}

/// [`build_podpce`] for a POD already fitted on the states of the same
/// members, so that several ranks can share one decomposition.
pub fn build_podpce_from_basis(
    params: &DMatrix<f64>,
    basis: &PodBasis,
    criterion: Truncation,
    transforms: &[InputTransform],
    config: &PceConfig,
    split_seed: u64,
    exec: Execution,
) -> Result<PodPceSurrogate> {
    config.validate()?;
    if params.ncols() != basis.n_members() {
        return Err(Error::dim(format!(
            "{} parameter members for a basis of {} members",
            params.ncols(),
            basis.n_members()
        )));
    }
    if transforms.len() != params.nrows() {
        return Err(Error::dim(format!(
            "{} input transforms for {} parameters",
            transforms.len(),
            params.nrows()
        )));
    }
    let basis = basis.truncate(criterion)?;
    let d = basis.retained();
    if d > basis.numerical_rank() {
        return Err(Error::Singular(format!(
            "retained rank {d} exceeds the numerical rank {} of the ensemble",
            basis.numerical_rank()
        )));
    }
    let n = params.ncols();
    let (train, val) = train_validation_split(n, config.train_fraction, split_seed)?;
    let samples = params.transpose();
    let targets = basis.coefficients().columns(0, d).into_owned();
    let (pce, _) = select_degree(
        &samples.select_rows(&train),
        &targets.select_rows(&train),
        &samples.select_rows(&val),
        &targets.select_rows(&val),
        transforms,
        config,
        exec,
    )?;
    Ok(PodPceSurrogate { basis, pce })
}

impl PodPceSurrogate {
    pub fn from_parts(basis: PodBasis, pce: PceModel) -> Result<Self> {
        if pce.output_dim() != basis.retained() {
            return Err(Error::dim(format!(
                "expansion has {} outputs, basis retains {} modes",
                pce.output_dim(),
                basis.retained()
            )));
        }
        Ok(PodPceSurrogate { basis, pce })
    }

    pub fn basis(&self) -> &PodBasis {
        &self.basis
    }

    pub fn pce(&self) -> &PceModel {
        &self.pce
    }

    pub fn rank(&self) -> usize {
        self.basis.retained()
    }

    pub fn param_dim(&self) -> usize {
        self.pce.input_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.basis.state_dim()
    }

    pub fn ensemble_size(&self) -> usize {
        self.basis.n_members()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.pce
            .transforms()
            .iter()
            .map(|t| match *t {
                InputTransform::Uniform { lo, hi } => (lo, hi),
                InputTransform::Gaussian { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            })
            .collect()
    }

    /// The same surrogate restricted to its first `d` modes. Per-mode fits do
    /// not depend on the rank, so this equals a fresh build at rank `d`.
    pub fn with_rank(&self, d: usize) -> Result<Self> {
        if d > self.rank() {
            return Err(Error::invalid(format!(
                "cannot extend a rank-{} surrogate to rank {d}",
                self.rank()
            )));
        }
        Ok(PodPceSurrogate {
            basis: self.basis.truncate(Truncation::Modes(d))?,
            pce: self.pce.truncate_outputs(d)?,
        })
    }

    pub fn reduced(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.pce.eval(x)
    }

    pub fn predict(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.basis.reconstruct(&self.pce.eval(x)?)
    }
}
