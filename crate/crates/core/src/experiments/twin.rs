use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;

use super::cell::{CellContext, CellSpec, Observation, SurrogateFamily};
use super::config::ExperimentConfig;
use super::metrics::rmse_global;
use super::noise::inject_noise;
use super::report::ExperimentReport;
use super::scenario::Scenario;
use super::config_hash;
use crate::assimilate::{solve_classical_3dvar, AnalysisResult, SolverKind};
use crate::exec::Execution;
use crate::rng::{indexed_stream, Substream};
use crate::surrogate::CovarianceKind;
use crate::toymodel::ToyModel;
use crate::{Error, Result};

/// Scenario, truth and background shared by the twin drivers.
struct Twin {
    sc: Scenario,
    x_t: DVector<f64>,
    y_t: DVector<f64>,
    b: DMatrix<f64>,
    rmse_background_truth: f64,
}

impl Twin {
    fn new(cfg: &ExperimentConfig, model: &ToyModel, pool: usize, exec: Execution) -> Result<Self> {
        let reference = cfg.reference_members.min(pool);
        let sc = Scenario::new(model.clone(), pool, reference, cfg.seed, exec)?;
        let x_t = sc.truth(cfg.truth.as_deref(), cfg.seed)?;
        let y_t = sc.simulate(x_t.as_slice())?;
        let x_b = DVector::zeros(sc.param_dim());
        let b = if cfg.b_from_truth {
            DMatrix::from_diagonal(&(&x_b - &x_t).map(|v| (v * v).max(1e-6)))
        } else {
            DMatrix::identity(sc.param_dim(), sc.param_dim())
        };
        let y_b = sc.simulate(x_b.as_slice())?;
        let rmse_background_truth = rmse_global(&y_t, &y_b, &sc.states)?;
        Ok(Twin {
            sc,
            x_t,
            y_t,
            b,
            rmse_background_truth,
        })
    }

    fn observation(&self, level: f64, seed: u64) -> Result<Observation> {
        let noisy = inject_noise(&self.y_t, &self.sc.series(), level, seed)?;
        Ok(Observation {
            noise: level,
            y_o_std: self.sc.states.apply(&noisy.y_o),
            r_std: self.sc.states.diagonal_covariance(&noisy.sigma),
            y_o: noisy.y_o,
        })
    }

    fn context<'a>(&'a self, experiment: &'a str, cfg: &'a ExperimentConfig) -> CellContext<'a> {
        CellContext {
            experiment,
            sc: &self.sc,
            cfg,
            b: self.b.clone(),
            x_t: Some(self.x_t.clone()),
            y_t: Some(self.y_t.clone()),
            rmse_background_truth: self.rmse_background_truth,
            y_classical: None,
        }
    }
}

fn run_cells(
    ctx: &CellContext<'_>,
    cells: &[CellSpec],
    families: &[SurrogateFamily],
    observations: &[Observation],
    seed: u64,
    hash: String,
    exec: Execution,
) -> ExperimentReport {
    let results = exec.map(cells, |c| ctx.run(c, families, observations));
    let (rows, wall_seconds) = results.into_iter().unzip();
    ExperimentReport {
        experiment: ctx.experiment.to_string(),
        seed,
        config_hash: hash,
        param_names: ctx.sc.param_names(),
        station_ids: ctx.sc.station_ids(),
        rows,
        wall_seconds,
    }
}

fn surrogate_cells(
    surrogates: &[SolverKind],
    covariances: &[CovarianceKind],
    poden_r_tilde: bool,
) -> Vec<(SolverKind, CovarianceKind)> {
    let mut out = Vec::new();
    for &s in surrogates {
        match s {
            SolverKind::PodPce => out.extend(covariances.iter().map(|&c| (s, c))),
            SolverKind::PodEn => {
                out.push((s, CovarianceKind::R));
                if poden_r_tilde {
                    out.push((s, CovarianceKind::RTilde));
                }
            }
            SolverKind::Classical => {}
        }
    }
    out
}

/// Noise, training-size and truncation sweep on a synthetic truth.
///
/// Cells are ordered by noise level, then training size, truncation,
/// surrogate and covariance. Surrogates are fitted once per training size on
/// the leading members of a nested pool, so a cell does not depend on which
/// other sizes are swept.
pub fn run_twin(cfg: &ExperimentConfig, model: &ToyModel, exec: Execution) -> Result<ExperimentReport> {
    cfg.validate()?;
    let tw = &cfg.twin;
    let n_max = *tw.training_sizes.last().expect("validated non-empty");
    let twin = Twin::new(cfg, model, n_max.max(cfg.reference_members), exec)?;
    let observations = tw
        .noise_levels
        .iter()
        .map(|&l| twin.observation(l, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    let families: Vec<SurrogateFamily> = tw
        .training_sizes
        .iter()
        .map(|&n| {
            let (x, y) = twin.sc.members(n)?;
            Ok(SurrogateFamily::fit(&x, &y, &tw.truncations, &twin.sc, cfg, cfg.seed, exec))
        })
        .collect::<Result<Vec<_>>>()?;
    let kinds = surrogate_cells(&tw.surrogates, &tw.covariances, tw.poden_r_tilde);
    let mut cells = Vec::new();
    for observation in 0..observations.len() {
        for family in 0..families.len() {
            for &truncation in &tw.truncations {
                for &(surrogate, covariance) in &kinds {
                    cells.push(CellSpec {
                        family,
                        observation,
                        truncation,
                        surrogate,
                        covariance,
                        alpha_b: 1.0,
                        alpha_r: 1.0,
                        replicate: None,
                    });
                }
            }
        }
    }
    let ctx = twin.context("twin", cfg);
    Ok(run_cells(&ctx, &cells, &families, &observations, cfg.seed, config_hash(cfg)?, exec))
}

/// POD-PCE analyses over the grid `α_B × α_R` of covariance multipliers,
/// `α_B` in the outer loop.
pub fn run_covariance_grid(cfg: &ExperimentConfig, model: &ToyModel, exec: Execution) -> Result<ExperimentReport> {
    cfg.validate()?;
    let g = &cfg.grid;
    let twin = Twin::new(cfg, model, g.training_size.max(cfg.reference_members), exec)?;
    let observations = vec![twin.observation(g.noise, cfg.seed)?];
    let (x, y) = twin.sc.members(g.training_size)?;
    let families = vec![SurrogateFamily::fit(&x, &y, &[g.truncation], &twin.sc, cfg, cfg.seed, exec)];
    let mut cells = Vec::new();
    for &alpha_b in &g.alphas {
        for &alpha_r in &g.alphas {
            cells.push(CellSpec {
                family: 0,
                observation: 0,
                truncation: g.truncation,
                surrogate: SolverKind::PodPce,
                covariance: g.covariance,
                alpha_b,
                alpha_r,
                replicate: None,
            });
        }
    }
    let ctx = twin.context("covgrid", cfg);
    Ok(run_cells(&ctx, &cells, &families, &observations, cfg.seed, config_hash(cfg)?, exec))
}

/// Member indices of bootstrap replicate `r`: `size` distinct pool members,
/// sorted.
pub fn bootstrap_indices(seed: u64, replicate: usize, pool: usize, size: usize) -> Vec<usize> {
    let mut rng = indexed_stream(seed, Substream::Bootstrap, replicate as u64);
    let mut idx = sample(&mut rng, pool, size).into_vec();
    idx.sort_unstable();
    idx
}

/// Refits the surrogates on `replicates` random subsets of a fixed pool and
/// assimilates the same observation with each.
pub fn run_bootstrap(cfg: &ExperimentConfig, model: &ToyModel, exec: Execution) -> Result<ExperimentReport> {
    cfg.validate()?;
    let bs = &cfg.bootstrap;
    let twin = Twin::new(cfg, model, bs.pool, exec)?;
    let observations = vec![twin.observation(bs.noise, cfg.seed)?];
    let replicates: Vec<usize> = (0..bs.replicates).collect();
    let families = exec.map(&replicates, |&r| {
        let (x, y) = twin.sc.select(&bootstrap_indices(cfg.seed, r, bs.pool, bs.size));
        SurrogateFamily::fit(&x, &y, &bs.truncations, &twin.sc, cfg, cfg.seed, Execution::Sequential)
    });
    let kinds = surrogate_cells(&bs.surrogates, &[bs.covariance], false);
    let mut cells = Vec::new();
    for &r in &replicates {
        for &truncation in &bs.truncations {
            for &(surrogate, covariance) in &kinds {
                cells.push(CellSpec {
                    family: r,
                    observation: 0,
                    truncation,
                    surrogate,
                    covariance,
                    alpha_b: 1.0,
                    alpha_r: 1.0,
                    replicate: Some(r),
                });
            }
        }
    }
    let ctx = twin.context("bootstrap", cfg);
    Ok(run_cells(&ctx, &cells, &families, &observations, cfg.seed, config_hash(cfg)?, exec))
}

/// One twin assimilation with the solver of `cfg.assimilate`, returning the
/// one-row report and the full analysis.
pub fn run_assimilation(
    cfg: &ExperimentConfig,
    model: &ToyModel,
    exec: Execution,
) -> Result<(ExperimentReport, AnalysisResult)> {
    cfg.validate()?;
    let a = &cfg.assimilate;
    let twin = Twin::new(cfg, model, a.training_size.max(cfg.reference_members), exec)?;
    let observations = vec![twin.observation(a.noise, cfg.seed)?];
    let ctx = twin.context("assimilate", cfg);
    let start = std::time::Instant::now();
    let (row, seconds, analysis) = match a.solver {
        SolverKind::Classical => {
            let obs = &observations[0];
            let r = obs.r_std.clone();
            let prob = ctx.problem(obs, r, a.alpha_b, a.alpha_r)?;
            let sc = &twin.sc;
            let out = solve_classical_3dvar(|z| sc.forward(z), &prob, &a.finite_difference, &cfg.optimizer)?;
            let mut row = ctx.fill(ctx.blank(SolverKind::Classical), &out, 0, obs);
            row.noise = a.noise;
            row.d = sc.param_dim();
            row.alpha_b = a.alpha_b;
            row.alpha_r = a.alpha_r;
            row.covariance = Some(CovarianceKind::R);
            (row, start.elapsed().as_secs_f64(), out)
        }
        surrogate => {
            let (x, y) = twin.sc.members(a.training_size)?;
            let families = vec![SurrogateFamily::fit(&x, &y, &[a.truncation], &twin.sc, cfg, cfg.seed, exec)];
            let spec = CellSpec {
                family: 0,
                observation: 0,
                truncation: a.truncation,
                surrogate,
                covariance: a.covariance,
                alpha_b: a.alpha_b,
                alpha_r: a.alpha_r,
                replicate: None,
            };
            let (row, _, analysis) = ctx.run_full(&spec, &families, &observations);
            let analysis = analysis.ok_or_else(|| Error::Numerical(row.reason.clone()))?;
            (row, start.elapsed().as_secs_f64(), analysis)
        }
    };
    let report = ExperimentReport {
        experiment: "assimilate".into(),
        seed: cfg.seed,
        config_hash: config_hash(cfg)?,
        param_names: twin.sc.param_names(),
        station_ids: twin.sc.station_ids(),
        rows: vec![row],
        wall_seconds: vec![seconds],
    };
    Ok((report, analysis))
}
