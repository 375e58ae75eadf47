use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::assimilate::{FiniteDifference, OptimizerConfig, SolverKind};
use crate::pce::PceConfig;
use crate::pod::Truncation;
use crate::surrogate::CovarianceKind;
use crate::{Error, Result};

/// Settings shared by every experiment driver plus one section per driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// True parameters in physical units; drawn uniformly in the bounds when
    /// absent.
    pub truth: Option<Vec<f64>>,
    /// Use `B = diag((x_b − x_t)²)` instead of the prior-table variances.
    pub b_from_truth: bool,
    /// Number of leading ensemble members used to fit the state standardizer.
    pub reference_members: usize,
    pub pce: PceConfig,
    pub optimizer: OptimizerConfig,
    pub twin: TwinSweep,
    pub grid: GridSweep,
    pub bootstrap: BootstrapSweep,
    pub measure: MeasureSweep,
    pub assimilate: SingleRun,
}

/// One twin assimilation with a single solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SingleRun {
    pub solver: SolverKind,
    pub covariance: CovarianceKind,
    pub noise: f64,
    pub training_size: usize,
    pub truncation: Truncation,
    pub alpha_b: f64,
    pub alpha_r: f64,
    pub finite_difference: FiniteDifference,
}

impl Default for SingleRun {
    fn default() -> Self {
        SingleRun {
            solver: SolverKind::PodPce,
            covariance: CovarianceKind::R,
            noise: 0.10,
            training_size: 400,
            truncation: Truncation::EvrThreshold(0.95),
            alpha_b: 1.0,
            alpha_r: 1.0,
            finite_difference: FiniteDifference::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwinSweep {
    pub noise_levels: Vec<f64>,
    pub training_sizes: Vec<usize>,
    pub truncations: Vec<Truncation>,
    pub surrogates: Vec<SolverKind>,
    /// Covariances tried with the POD-PCE surrogate. The joint-POD surrogate
    /// always uses `R` unless `poden_r_tilde` is set.
    pub covariances: Vec<CovarianceKind>,
    pub poden_r_tilde: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSweep {
    pub noise: f64,
    pub training_size: usize,
    pub truncation: Truncation,
    pub covariance: CovarianceKind,
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapSweep {
    pub replicates: usize,
    /// Members per replicate, drawn without replacement from the pool.
    pub size: usize,
    pub pool: usize,
    pub noise: f64,
    pub truncations: Vec<Truncation>,
    pub surrogates: Vec<SolverKind>,
    pub covariance: CovarianceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureSweep {
    /// Observation file (snapshot CSV with one member column). When absent
    /// the observation is the noiseless model output at the truth parameters.
    pub observation_file: Option<PathBuf>,
    /// Observation error as a fraction of each series' standard deviation.
    pub obs_error_level: f64,
    pub training_sizes: Vec<usize>,
    pub truncations: Vec<Truncation>,
    pub covariances: Vec<CovarianceKind>,
    pub include_poden: bool,
    pub finite_difference: FiniteDifference,
}

fn default_truncations() -> Vec<Truncation> {
    let mut t: Vec<Truncation> = (1..=6).map(Truncation::Modes).collect();
    t.push(Truncation::EvrThreshold(0.95));
    t
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            truth: None,
            b_from_truth: false,
            reference_members: 400,
            pce: PceConfig::default(),
            optimizer: OptimizerConfig::default(),
            twin: TwinSweep::default(),
            grid: GridSweep::default(),
            bootstrap: BootstrapSweep::default(),
            measure: MeasureSweep::default(),
            assimilate: SingleRun::default(),
        }
    }
}

impl Default for TwinSweep {
    fn default() -> Self {
        TwinSweep {
            noise_levels: vec![0.01, 0.05, 0.10, 0.20, 0.40],
            training_sizes: vec![100, 200, 400],
            truncations: default_truncations(),
            surrogates: vec![SolverKind::PodPce, SolverKind::PodEn],
            covariances: vec![CovarianceKind::R, CovarianceKind::RTilde, CovarianceKind::RTildeCorrected],
            poden_r_tilde: false,
        }
    }
}

impl Default for GridSweep {
    fn default() -> Self {
        GridSweep {
            noise: 0.10,
            training_size: 400,
            truncation: Truncation::Modes(5),
            covariance: CovarianceKind::RTilde,
            alphas: vec![0.01, 0.1, 1.0, 10.0, 100.0],
        }
    }
}

impl Default for BootstrapSweep {
    fn default() -> Self {
        BootstrapSweep {
            replicates: 50,
            size: 800,
            pool: 1000,
            noise: 0.10,
            truncations: (1..=6).map(Truncation::Modes).collect(),
            surrogates: vec![SolverKind::PodPce, SolverKind::PodEn],
            covariance: CovarianceKind::R,
        }
    }
}

impl Default for MeasureSweep {
    fn default() -> Self {
        MeasureSweep {
            observation_file: None,
            obs_error_level: 0.10,
            training_sizes: vec![50, 100, 200, 300, 400],
            truncations: vec![
                Truncation::Modes(4),
                Truncation::Modes(5),
                Truncation::Modes(6),
                Truncation::EvrThreshold(0.95),
            ],
            covariances: vec![CovarianceKind::R, CovarianceKind::RTilde],
            include_poden: true,
            finite_difference: FiniteDifference::default(),
        }
    }
}

fn check_noise(level: f64) -> Result<()> {
    if level == 0.0 {
        return Err(Error::NotPositiveDefinite {
            name: "observation covariance".into(),
            min_eigenvalue: 0.0,
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("noise level {level} outside (0, 1)")));
    }
    Ok(())
}

fn check_sizes(name: &str, sizes: &[usize]) -> Result<()> {
    if sizes.is_empty() {
        return Err(Error::invalid(format!("{name} is empty")));
    }
    if sizes[0] < 8 || sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!(
            "{name} must be strictly increasing and start at 8 or more members"
        )));
    }
    Ok(())
}

fn check_truncations(list: &[Truncation]) -> Result<()> {
    if list.is_empty() {
        return Err(Error::invalid("no truncation configured"));
    }
    for t in list {
        match *t {
            Truncation::Modes(0) => return Err(Error::invalid("a truncation keeps at least one mode")),
            Truncation::EvrThreshold(tau) if !(tau > 0.0 && tau <= 1.0) => {
                return Err(Error::invalid(format!("EVR threshold {tau} outside (0, 1]")))
            }
            _ => {}
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.pce.validate()?;
        self.optimizer.validate()?;
        if self.reference_members < 2 {
            return Err(Error::invalid("reference_members must be at least 2"));
        }
        if let Some(t) = &self.truth {
            if t.len() != crate::toymodel::N_PARAMS {
                return Err(Error::invalid(format!(
                    "truth has {} values, expected {}",
                    t.len(),
                    crate::toymodel::N_PARAMS
                )));
            }
        }
        let tw = &self.twin;
        if tw.noise_levels.is_empty() {
            return Err(Error::invalid("twin.noise_levels is empty"));
        }
        for &l in &tw.noise_levels {
            check_noise(l)?;
        }
        check_sizes("twin.training_sizes", &tw.training_sizes)?;
        check_truncations(&tw.truncations)?;
        if tw.surrogates.iter().any(|s| *s == SolverKind::Classical) {
            return Err(Error::invalid("twin.surrogates accepts podpce and poden only"));
        }
        check_noise(self.grid.noise)?;
        check_sizes("grid.training_size", &[self.grid.training_size])?;
        check_truncations(&[self.grid.truncation])?;
        if self.grid.alphas.is_empty() || self.grid.alphas.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::invalid("grid.alphas must be positive"));
        }
        let bs = &self.bootstrap;
        check_noise(bs.noise)?;
        check_truncations(&bs.truncations)?;
        if bs.replicates == 0 || bs.size < 8 || bs.size > bs.pool {
            return Err(Error::invalid(
                "bootstrap needs replicates ≥ 1 and 8 ≤ size ≤ pool",
            ));
        }
        if bs.surrogates.iter().any(|s| *s == SolverKind::Classical) {
            return Err(Error::invalid("bootstrap.surrogates accepts podpce and poden only"));
        }
        let ms = &self.measure;
        check_noise(ms.obs_error_level)?;
        check_sizes("measure.training_sizes", &ms.training_sizes)?;
        check_truncations(&ms.truncations)?;
        let a = &self.assimilate;
        check_noise(a.noise)?;
        check_sizes("assimilate.training_size", &[a.training_size])?;
        check_truncations(&[a.truncation])?;
        if !(a.alpha_b > 0.0 && a.alpha_r > 0.0) {
            return Err(Error::invalid("assimilate.alpha_b and alpha_r must be positive"));
        }
        Ok(())
    }
}

pub(crate) fn truncation_label(t: &Truncation) -> String {
    match *t {
        Truncation::Modes(d) => format!("modes={d}"),
        Truncation::EvrThreshold(tau) => format!("evr={tau}"),
    }
}
