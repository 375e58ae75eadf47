use nalgebra::{DMatrix, DVector};

use super::cell::{CellContext, CellSpec, Observation, SurrogateFamily};
use super::config::ExperimentConfig;
use super::config_hash;
use super::noise::series_sigma;
use super::report::ExperimentReport;
use super::scenario::Scenario;
use crate::assimilate::{solve_classical_3dvar, SolverKind};
use crate::exec::Execution;
use crate::surrogate::CovarianceKind;
use crate::toymodel::ToyModel;
use crate::{Error, Result};

/// Confronts the surrogate solvers with classical 3DVAR on one observation.
///
/// `observation` is a physical state in the model layout. Without one, the
/// model output at the configured (or drawn) truth is used, and parameter
/// errors are reported against that truth. `R` is diagonal with standard
/// deviations `obs_error_level` times each observed series' standard
/// deviation. The first row is the classical analysis; the others follow in
/// training size, truncation, surrogate and covariance order.
pub fn run_measurement(
    cfg: &ExperimentConfig,
    model: &ToyModel,
    observation: Option<&DVector<f64>>,
    exec: Execution,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let ms = &cfg.measure;
    let n_max = *ms.training_sizes.last().expect("validated non-empty");
    let sc = Scenario::new(model.clone(), n_max.max(cfg.reference_members), cfg.reference_members, cfg.seed, exec)?;
    let (y_o, x_t) = match observation {
        Some(y) => {
            if y.len() != sc.state_dim() {
                return Err(Error::dim(format!(
                    "observation has {} values, the model layout has {}",
                    y.len(),
                    sc.state_dim()
                )));
            }
            if let Some(i) = y.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: i, col: 0 });
            }
            (y.clone(), None)
        }
        None => {
            let x_t = sc.truth(cfg.truth.as_deref(), cfg.seed)?;
            (sc.simulate(x_t.as_slice())?, Some(x_t))
        }
    };
    let (sigma, _) = series_sigma(&y_o, &sc.series(), ms.obs_error_level)?;
    let obs = Observation {
        noise: ms.obs_error_level,
        y_o_std: sc.states.apply(&y_o),
        r_std: sc.states.diagonal_covariance(&sigma),
        y_o,
    };
    let m_x = sc.param_dim();
    let b = match (&x_t, cfg.b_from_truth) {
        (Some(x_t), true) => DMatrix::from_diagonal(&x_t.map(|v| (v * v).max(1e-6))),
        _ => DMatrix::identity(m_x, m_x),
    };
    let mut ctx = CellContext {
        experiment: "measure",
        sc: &sc,
        cfg,
        b,
        x_t,
        y_t: None,
        rmse_background_truth: f64::NAN,
        y_classical: None,
    };

    let start = std::time::Instant::now();
    let prob = ctx.problem(&obs, obs.r_std.clone(), 1.0, 1.0)?;
    let classical = solve_classical_3dvar(|z| sc.forward(z), &prob, &ms.finite_difference, &cfg.optimizer)?;
    ctx.y_classical = Some(sc.simulate(classical.x_a.as_slice())?);
    let mut first = ctx.fill(ctx.blank(SolverKind::Classical), &classical, 0, &obs);
    first.noise = obs.noise;
    first.covariance = Some(CovarianceKind::R);
    first.d = m_x;
    let classical_seconds = start.elapsed().as_secs_f64();

    let families: Vec<SurrogateFamily> = ms
        .training_sizes
        .iter()
        .map(|&n| {
            let (x, y) = sc.members(n)?;
            Ok(SurrogateFamily::fit(&x, &y, &ms.truncations, &sc, cfg, cfg.seed, exec))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    for family in 0..families.len() {
        for &truncation in &ms.truncations {
            let mut kinds: Vec<(SolverKind, CovarianceKind)> =
                ms.covariances.iter().map(|&c| (SolverKind::PodPce, c)).collect();
            if ms.include_poden {
                kinds.push((SolverKind::PodEn, CovarianceKind::R));
            }
            for (surrogate, covariance) in kinds {
                cells.push(CellSpec {
                    family,
                    observation: 0,
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
    let observations = [obs];
    let results = exec.map(&cells, |c| ctx.run(c, &families, &observations));
    let mut rows = vec![first];
    let mut wall_seconds = vec![classical_seconds];
    for (row, t) in results {
        rows.push(row);
        wall_seconds.push(t);
    }
    Ok(ExperimentReport {
        experiment: "measure".into(),
        seed: cfg.seed,
        config_hash: config_hash(cfg)?,
        param_names: sc.param_names(),
        station_ids: sc.station_ids(),
        rows,
        wall_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pod::Truncation;

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.reference_members = 60;
        cfg.pce.max_degree = 3;
        cfg.measure.training_sizes = vec![40, 60];
        cfg.measure.truncations = vec![Truncation::Modes(3)];
        cfg
    }

    #[test]
    fn classical_row_comes_first_and_counts_its_runs() {
        let cfg = small_config();
        let rep = run_measurement(&cfg, &ToyModel::default(), None, Execution::Sequential).unwrap();
        assert_eq!(rep.rows.len(), 1 + 2 * 3);
        let c = &rep.rows[0];
        assert_eq!(c.surrogate, SolverKind::Classical);
        assert!(c.ok, "{}", c.reason);
        assert!(c.model_evaluations >= c.iterations * 8);
        assert_eq!(c.rmse_to_classical, 0.0);
        assert!(c.rmse_truth.is_nan());
        for r in &rep.rows[1..] {
            assert!(r.ok, "{}", r.reason);
            assert_eq!(r.forward_calls, r.n);
            assert!(r.rmse_to_classical.is_finite());
        }
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let cfg = small_config();
        let y = DVector::zeros(10);
        let err = run_measurement(&cfg, &ToyModel::default(), Some(&y), Execution::Sequential).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }
}
