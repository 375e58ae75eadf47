//! Pieces shared by the sweep drivers: surrogate families fitted once per
//! training set, one assimilation per cell and its metrics.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::config::{truncation_label, ExperimentConfig};
use super::metrics::{rmse_by, rmse_global, relative_rmse_global, station_groups, variable_groups};
use super::report::ReportRow;
use super::scenario::Scenario;
use crate::assimilate::{
    solve_poden3dvar, solve_podpce3dvar, AnalysisResult, AssimilationProblem, PodEnOptions, SolverKind,
};
use crate::exec::Execution;
use crate::pod::{fit_pod, SnapshotMatrix, Truncation};
use crate::surrogate::{
    build_podpce_from_basis, build_poden, corrected_error_covariance, metamodel_error_covariance,
    poden_error_covariance, CovarianceKind, PodEnSurrogate, PodPceSurrogate,
};
use crate::{Error, Result};

/// Both surrogate kinds fitted on one training set, at the largest rank any
/// configured truncation asks for.
#[derive(Debug, Clone)]
pub(crate) struct SurrogateFamily {
    pub n: usize,
    pub podpce: std::result::Result<PodPceSurrogate, String>,
    pub poden: std::result::Result<PodEnSurrogate, String>,
}

impl SurrogateFamily {
    pub fn fit(
        x: &DMatrix<f64>,
        y: &DMatrix<f64>,
        truncations: &[Truncation],
        sc: &Scenario,
        cfg: &ExperimentConfig,
        split_seed: u64,
        exec: Execution,
    ) -> Self {
        let podpce = (|| {
            let basis = fit_pod(&SnapshotMatrix::new(y.clone())?)?;
            let d_max = truncations
                .iter()
                .filter_map(|t| basis.rank_for(*t).ok())
                .max()
                .ok_or_else(|| Error::invalid("no truncation applies to this ensemble"))?
                .min(basis.numerical_rank());
            build_podpce_from_basis(
                x,
                &basis,
                Truncation::Modes(d_max.max(1)),
                &sc.transforms,
                &cfg.pce,
                split_seed,
                exec,
            )
        })()
        .map_err(|e| e.to_string());
        let poden = build_poden(x, y, Truncation::EvrThreshold(1.0)).map_err(|e| e.to_string());
        SurrogateFamily {
            n: x.ncols(),
            podpce,
            poden,
        }
    }

    /// POD-PCE surrogate at the rank of `t`, chosen on the state POD.
    pub fn podpce_at(&self, t: Truncation) -> Result<PodPceSurrogate> {
        let s = self.podpce.as_ref().map_err(|e| Error::Numerical(e.clone()))?;
        let d = s.basis().rank_for(t)?;
        if d > s.rank() {
            return Err(Error::Singular(format!(
                "rank {d} exceeds the numerical rank {} of the ensemble",
                s.rank()
            )));
        }
        s.with_rank(d)
    }

    /// Joint-POD surrogate at the rank of `t`, chosen on the joint POD.
    pub fn poden_at(&self, t: Truncation) -> Result<PodEnSurrogate> {
        self.poden
            .as_ref()
            .map_err(|e| Error::Numerical(e.clone()))?
            .with_rank(t)
    }
}

/// Observation with its covariance, in physical and standardized units.
#[derive(Debug, Clone)]
pub(crate) struct Observation {
    pub noise: f64,
    pub y_o: DVector<f64>,
    pub y_o_std: DVector<f64>,
    pub r_std: DMatrix<f64>,
}

/// Everything a cell needs besides the surrogate.
pub(crate) struct CellContext<'a> {
    pub experiment: &'a str,
    pub sc: &'a Scenario,
    pub cfg: &'a ExperimentConfig,
    pub b: DMatrix<f64>,
    /// Standardized truth, when known.
    pub x_t: Option<DVector<f64>>,
    /// Physical truth state; twin mode only.
    pub y_t: Option<DVector<f64>>,
    pub rmse_background_truth: f64,
    /// Physical model state at the classical analysis; measurement mode only.
    pub y_classical: Option<DVector<f64>>,
}

/// What to run in one cell.
#[derive(Debug, Clone)]
pub(crate) struct CellSpec {
    pub family: usize,
    pub observation: usize,
    pub truncation: Truncation,
    pub surrogate: SolverKind,
    pub covariance: CovarianceKind,
    pub alpha_b: f64,
    pub alpha_r: f64,
    pub replicate: Option<usize>,
}

impl CellContext<'_> {
    pub fn blank(&self, surrogate: SolverKind) -> ReportRow {
        let mut row = ReportRow::blank(self.experiment, surrogate, self.sc.param_dim(), self.sc.model.n_stations());
        row.rmse_background_truth = self.rmse_background_truth;
        row
    }

    pub fn problem(&self, obs: &Observation, r: DMatrix<f64>, alpha_b: f64, alpha_r: f64) -> Result<AssimilationProblem> {
        AssimilationProblem::with_scaling(
            DVector::zeros(self.sc.param_dim()),
            self.b.clone(),
            obs.y_o_std.clone(),
            r,
            self.sc.bounds.clone(),
            alpha_b,
            alpha_r,
        )
    }

    pub fn run(&self, spec: &CellSpec, families: &[SurrogateFamily], observations: &[Observation]) -> (ReportRow, f64) {
        let (row, t, _) = self.run_full(spec, families, observations);
        (row, t)
    }

    pub fn run_full(
        &self,
        spec: &CellSpec,
        families: &[SurrogateFamily],
        observations: &[Observation],
    ) -> (ReportRow, f64, Option<AnalysisResult>) {
        let start = Instant::now();
        let family = &families[spec.family];
        let obs = &observations[spec.observation];
        let mut row = self.blank(spec.surrogate);
        row.truncation = truncation_label(&spec.truncation);
        row.n = family.n;
        row.noise = obs.noise;
        row.alpha_b = spec.alpha_b;
        row.alpha_r = spec.alpha_r;
        row.replicate = spec.replicate;
        row.covariance = Some(spec.covariance);
        let outcome = (|| -> Result<(usize, AnalysisResult)> {
            match spec.surrogate {
                SolverKind::PodPce => {
                    let s = family.podpce_at(spec.truncation)?;
                    let r = match spec.covariance {
                        CovarianceKind::R => obs.r_std.clone(),
                        CovarianceKind::RTilde => metamodel_error_covariance(&s, &obs.r_std)?.matrix,
                        CovarianceKind::RTildeCorrected => {
                            corrected_error_covariance(&s, &obs.r_std, s.pce().validation_bias())?.matrix
                        }
                    };
                    let prob = self.problem(obs, r, spec.alpha_b, spec.alpha_r)?;
                    Ok((s.rank(), solve_podpce3dvar(&s, &prob, &self.cfg.optimizer)?))
                }
                SolverKind::PodEn => {
                    let s = family.poden_at(spec.truncation)?;
                    let r = match spec.covariance {
                        CovarianceKind::R => obs.r_std.clone(),
                        _ => poden_error_covariance(&s, &obs.r_std)?.matrix,
                    };
                    let prob = self.problem(obs, r, spec.alpha_b, spec.alpha_r)?;
                    let options = PodEnOptions {
                        optimizer: self.cfg.optimizer,
                        ..PodEnOptions::default()
                    };
                    Ok((s.rank(), solve_poden3dvar(&s, &prob, &options)?))
                }
                SolverKind::Classical => Err(Error::invalid("classical 3DVAR is not a surrogate cell")),
            }
        })();
        let (row, analysis) = match outcome {
            Ok((d, a)) => {
                row.d = d;
                (self.fill(row, &a, family.n, obs), Some(a))
            }
            Err(e) => (row.fail(&e), None),
        };
        (row, start.elapsed().as_secs_f64(), analysis)
    }

    /// Metrics of an analysis. `ensemble` is the number of forward runs spent
    /// on training.
    pub fn fill(&self, mut row: ReportRow, a: &AnalysisResult, ensemble: usize, obs: &Observation) -> ReportRow {
        let sc = self.sc;
        let result = (|| -> Result<()> {
            let y_model = sc.simulate(a.x_a.as_slice())?;
            let y_surr = sc.states.invert(&a.y_a);
            let var = variable_groups(&sc.model);
            let sta = station_groups(&sc.model);
            row.rmse_obs = rmse_global(&obs.y_o, &y_model, &sc.states)?;
            let reference = match &self.y_t {
                Some(y_t) => {
                    row.rmse_truth = rmse_global(y_t, &y_model, &sc.states)?;
                    row.rmse_truth_surrogate = rmse_global(y_t, &y_surr, &sc.states)?;
                    row.relative_rmse_truth = relative_rmse_global(y_t, &y_model, &sc.states)?;
                    y_t.clone()
                }
                None => obs.y_o.clone(),
            };
            row.rmse_by_variable = rmse_by(&reference, &y_model, &sc.states, &var)?;
            row.rmse_by_station = rmse_by(&reference, &y_model, &sc.states, &sta)?;
            if let Some(yc) = &self.y_classical {
                row.rmse_to_classical = rmse_global(yc, &y_model, &sc.states)?;
            }
            Ok(())
        })();
        row.x_a_std = a.x_a.iter().copied().collect();
        row.x_a = sc.to_physical_params(&a.x_a).iter().copied().collect();
        if let Some(x_t) = &self.x_t {
            row.param_error = (&a.x_a - x_t).amax();
        }
        row.cost = a.cost;
        row.iterations = a.iterations;
        row.model_evaluations = a.model_evaluations;
        row.forward_calls = ensemble + a.model_evaluations;
        row.converged = a.converged;
        row.reason = a.reason.clone();
        row.ok = true;
        match result {
            Ok(()) => row,
            Err(e) => row.fail(&e),
        }
    }
}
