use std::cell::{Cell, RefCell};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::optimizer::{bounded_quasi_newton, OptimResult, OptimizerConfig, TraceEntry};
use super::problem::AssimilationProblem;
use crate::surrogate::{PodEnSurrogate, PodPceSurrogate};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Classical,
    PodEn,
    PodPce,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Classical => "classical",
            SolverKind::PodEn => "poden",
            SolverKind::PodPce => "podpce",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisResult {
    pub solver: SolverKind,
    pub x_a: DVector<f64>,
    /// Model state at the analysis as seen by the solver: the surrogate output
    /// for surrogate solvers, the forward model output for classical 3DVAR.
    pub y_a: DVector<f64>,
    /// Reduced analysis of the joint-POD solver.
    pub nu_a: Option<DVector<f64>>,
    pub cost: f64,
    pub cost_trace: Vec<TraceEntry>,
    pub iterations: usize,
    /// Forward-model runs made by the solver itself.
    pub model_evaluations: usize,
    pub surrogate_evaluations: usize,
    pub converged: bool,
    pub reason: String,
}

fn from_optim(
    solver: SolverKind,
    out: OptimResult,
    y_a: DVector<f64>,
    model_evaluations: usize,
    surrogate_evaluations: usize,
) -> AnalysisResult {
    AnalysisResult {
        solver,
        x_a: out.x,
        y_a,
        nu_a: None,
        cost: out.cost,
        cost_trace: out.trace,
        iterations: out.iterations,
        model_evaluations,
        surrogate_evaluations,
        converged: out.converged,
        reason: out.reason,
    }
}

fn check_dims(prob: &AssimilationProblem, m_x: usize, m_y: usize, what: &str) -> Result<()> {
    if prob.param_dim() != m_x || prob.obs_dim() != m_y {
        return Err(Error::dim(format!(
            "{what} maps {m_x} parameters to {m_y} outputs, problem has {} and {}",
            prob.param_dim(),
            prob.obs_dim()
        )));
    }
    Ok(())
}

/// Reduced quadratic cost of the joint-POD surrogate,
/// `J̃(ν) = ½‖x̄ + Φ_xΣν − x_b‖²_{B⁻¹} + ½‖ȳ + Φ_yΣν − y_o‖²_{R⁻¹}`,
/// in whitened form `½‖a + A ν‖² + ½‖c + C ν‖²`.
#[derive(Debug, Clone)]
pub struct PodEnCost {
    a: DVector<f64>,
    a_mat: DMatrix<f64>,
    c: DVector<f64>,
    c_mat: DMatrix<f64>,
}

impl PodEnCost {
    pub fn new(s: &PodEnSurrogate, prob: &AssimilationProblem) -> Result<Self> {
        check_dims(prob, s.param_dim(), s.state_dim(), "joint-POD surrogate")?;
        let (px, py) = s.scaled_blocks();
        let bf = prob.background_factor();
        let rf = prob.observation_factor();
        Ok(PodEnCost {
            a: bf.whiten(&(s.mean_x() - prob.x_b())),
            a_mat: bf.whiten_matrix(&px),
            c: rf.whiten(&(s.mean_y() - prob.y_o())),
            c_mat: rf.whiten_matrix(&py),
        })
    }

    pub fn dim(&self) -> usize {
        self.a_mat.ncols()
    }

    pub fn value_and_gradient(&self, nu: &DVector<f64>) -> (f64, DVector<f64>) {
        let rb = &self.a + &self.a_mat * nu;
        let ro = &self.c + &self.c_mat * nu;
        let value = 0.5 * (rb.norm_squared() + ro.norm_squared());
        let grad = self.a_mat.tr_mul(&rb) + self.c_mat.tr_mul(&ro);
        (value, grad)
    }

    /// Stationary point of the quadratic.
    pub fn minimizer(&self) -> Result<DVector<f64>> {
        let normal = self.a_mat.tr_mul(&self.a_mat) + self.c_mat.tr_mul(&self.c_mat);
        let rhs = -(self.a_mat.tr_mul(&self.a) + self.c_mat.tr_mul(&self.c));
        let d = self.dim();
        let chol = normal.clone().cholesky().ok_or_else(|| {
            Error::Singular(format!(
                "the {d}×{d} reduced normal matrix is singular; retain fewer modes"
            ))
        })?;
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        if !(lo > 0.0) || (hi / lo).powi(2) > 1e14 {
            return Err(Error::Singular(format!(
                "the {d}×{d} reduced normal matrix is numerically singular; retain fewer modes"
            )));
        }
        Ok(chol.solve(&rhs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PodEnMethod {
    /// Direct solve of the normal equations.
    ClosedForm,
    /// Quasi-Newton descent on the same reduced cost.
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PodEnOptions {
    pub method: PodEnMethod,
    /// Clip the analysed parameters to the bounds.
    pub clamp_to_bounds: bool,
    pub optimizer: OptimizerConfig,
}

impl Default for PodEnOptions {
    fn default() -> Self {
        PodEnOptions {
            method: PodEnMethod::ClosedForm,
            clamp_to_bounds: true,
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// Joint-POD 3DVAR: the reduced cost is quadratic, so the analysis is the
/// solution of a `d × d` linear system.
pub fn solve_poden3dvar(
    s: &PodEnSurrogate,
    prob: &AssimilationProblem,
    options: &PodEnOptions,
) -> Result<AnalysisResult> {
    let cost = PodEnCost::new(s, prob)?;
    let (nu_a, trace, iterations, mut converged, mut reason) = match options.method {
        PodEnMethod::ClosedForm => {
            let nu = cost.minimizer()?;
            let (j, g) = cost.value_and_gradient(&nu);
            let trace = vec![TraceEntry {
                cost: j,
                projected_gradient_norm: g.norm(),
            }];
            (nu, trace, 0, true, "closed-form analysis".to_string())
        }
        PodEnMethod::Iterative => {
            let d = cost.dim();
            let out = bounded_quasi_newton(
                |nu| Ok(cost.value_and_gradient(nu)),
                &DVector::zeros(d),
                &vec![(f64::NEG_INFINITY, f64::INFINITY); d],
                &options.optimizer,
            )?;
            (out.x, out.trace, out.iterations, out.converged, out.reason)
        }
    };
    let (mut x_a, y_a) = s.predict(&nu_a)?;
    if options.clamp_to_bounds {
        let clipped: Vec<usize> = (0..x_a.len())
            .filter(|&i| {
                let (lo, hi) = prob.bounds()[i];
                x_a[i] < lo || x_a[i] > hi
            })
            .collect();
        for &i in &clipped {
            let (lo, hi) = prob.bounds()[i];
            x_a[i] = x_a[i].clamp(lo, hi);
        }
        if !clipped.is_empty() {
            reason = format!("{reason}; parameters {clipped:?} clipped to bounds");
        }
    } else if !prob.in_bounds(&x_a) {
        converged = false;
        reason = format!("{reason}; analysis outside bounds");
    }
    let j = trace.last().map(|t| t.cost).unwrap_or(f64::NAN);
    Ok(AnalysisResult {
        solver: SolverKind::PodEn,
        x_a,
        y_a,
        nu_a: Some(nu_a),
        cost: j,
        cost_trace: trace,
        iterations,
        model_evaluations: 0,
        surrogate_evaluations: 1,
        converged,
        reason,
    })
}

/// Cost of the POD-PCE surrogate with its analytic gradient
/// `∇J̃ = B⁻¹(x − x_b) + J_ν(x)ᵀ Wᵀ (w₀ + W ν̃(x))`, `W = L_R⁻¹ Φ⁽ᵈ⁾Σ⁽ᵈ⁾`,
/// `w₀ = L_R⁻¹ (ȳ − y_o)`.
#[derive(Debug, Clone)]
pub struct PodPceCost<'a> {
    surrogate: &'a PodPceSurrogate,
    prob: &'a AssimilationProblem,
    w: DMatrix<f64>,
    w0: DVector<f64>,
}

impl<'a> PodPceCost<'a> {
    pub fn new(surrogate: &'a PodPceSurrogate, prob: &'a AssimilationProblem) -> Result<Self> {
        check_dims(prob, surrogate.param_dim(), surrogate.state_dim(), "POD-PCE surrogate")?;
        let rf = prob.observation_factor();
        Ok(PodPceCost {
            surrogate,
            prob,
            w: rf.whiten_matrix(&surrogate.basis().scaled_modes()),
            w0: rf.whiten(&(surrogate.basis().mean() - prob.y_o())),
        })
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        let nu = self.surrogate.reduced(x.as_slice())?;
        let ro = &self.w0 + &self.w * nu;
        let dx = x - self.prob.x_b();
        Ok(0.5 * self.prob.background_factor().mahalanobis_sq(&dx) + 0.5 * ro.norm_squared())
    }

    pub fn value_and_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let pce = self.surrogate.pce();
        let nu = pce.eval(x.as_slice())?;
        let jac = pce.jacobian(x.as_slice())?;
        let ro = &self.w0 + &self.w * nu;
        let dx = x - self.prob.x_b();
        let bf = self.prob.background_factor();
        let value = 0.5 * bf.mahalanobis_sq(&dx) + 0.5 * ro.norm_squared();
        let grad = bf.solve(&dx) + jac.tr_mul(&self.w.tr_mul(&ro));
        Ok((value, grad))
    }
}

/// POD-PCE 3DVAR: bound-constrained quasi-Newton on the surrogate cost.
pub fn solve_podpce3dvar(
    s: &PodPceSurrogate,
    prob: &AssimilationProblem,
    config: &OptimizerConfig,
) -> Result<AnalysisResult> {
    let cost = PodPceCost::new(s, prob)?;
    let out = bounded_quasi_newton(|x| cost.value_and_gradient(x), prob.x_b(), prob.bounds(), config)?;
    let y_a = s.predict(out.x.as_slice())?;
    let calls = out.evaluations;
    Ok(from_optim(SolverKind::PodPce, out, y_a, 0, calls))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiniteDifference {
    /// Step as a fraction of each parameter's bound width.
    pub relative_step: f64,
}

impl Default for FiniteDifference {
    fn default() -> Self {
        FiniteDifference { relative_step: 1e-4 }
    }
}

/// Classical 3DVAR on the forward model itself. The model Jacobian is
/// estimated by central differences (one-sided within a step of a bound),
/// costing `2·m_x` runs per gradient away from the bounds.
pub fn solve_classical_3dvar<G>(
    model: G,
    prob: &AssimilationProblem,
    fd: &FiniteDifference,
    config: &OptimizerConfig,
) -> Result<AnalysisResult>
where
    G: Fn(&[f64]) -> Result<DVector<f64>>,
{
    if !(fd.relative_step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let m_x = prob.param_dim();
    let steps: Vec<f64> = prob
        .bounds()
        .iter()
        .map(|&(lo, hi)| fd.relative_step * (hi - lo))
        .collect();
    let calls = Cell::new(0usize);
    let last = RefCell::new(None::<(DVector<f64>, DVector<f64>)>);
    let run = |x: &DVector<f64>| -> Result<DVector<f64>> {
        calls.set(calls.get() + 1);
        let y = model(x.as_slice()).map_err(|e| match e {
            Error::ModelFailure { .. } => e,
            other => Error::ModelFailure {
                location: x.iter().copied().collect(),
                reason: other.to_string(),
            },
        })?;
        if y.len() != prob.obs_dim() {
            return Err(Error::dim(format!(
                "forward model returned {} outputs, expected {}",
                y.len(),
                prob.obs_dim()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelFailure {
                location: x.iter().copied().collect(),
                reason: "non-finite model output".into(),
            });
        }
        Ok(y)
    };
    let rf = prob.observation_factor();
    let bf = prob.background_factor();

    let f_grad = |x: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let y = run(x)?;
        let mut jac = DMatrix::zeros(prob.obs_dim(), m_x);
        for i in 0..m_x {
            let (lo, hi) = prob.bounds()[i];
            let h = steps[i];
            let mut xp = x.clone();
            let mut xm = x.clone();
            let column = if x[i] + h <= hi && x[i] - h >= lo {
                xp[i] += h;
                xm[i] -= h;
                (run(&xp)? - run(&xm)?) / (2.0 * h)
            } else if x[i] + h <= hi {
                xp[i] += h;
                (run(&xp)? - &y) / h
            } else {
                xm[i] -= h;
                (&y - run(&xm)?) / h
            };
            jac.set_column(i, &column);
        }
        let dx = x - prob.x_b();
        let innov = &y - prob.y_o();
        let value = 0.5 * bf.mahalanobis_sq(&dx) + 0.5 * rf.mahalanobis_sq(&innov);
        let grad = bf.solve(&dx) + jac.tr_mul(&rf.solve(&innov));
        *last.borrow_mut() = Some((x.clone(), y));
        Ok((value, grad))
    };
    let out = bounded_quasi_newton(f_grad, prob.x_b(), prob.bounds(), config)?;
    let cached = last.borrow_mut().take();
    let y_a = match cached {
        Some((x, y)) if x == out.x => y,
        _ => run(&out.x)?,
    };
    let n_calls = calls.get();
    Ok(from_optim(SolverKind::Classical, out, y_a, n_calls, 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(x_b: Vec<f64>, y_o: Vec<f64>, bounds: (f64, f64)) -> AssimilationProblem {
        let (m, k) = (x_b.len(), y_o.len());
        AssimilationProblem::new(
            DVector::from_vec(x_b),
            DMatrix::identity(m, m),
            DVector::from_vec(y_o),
            DMatrix::identity(k, k),
            vec![bounds; m],
        )
        .unwrap()
    }

    #[test]
    fn classical_identity_model_stays_at_background() {
        let p = problem(vec![0.2, -0.3], vec![0.2, -0.3], (-1.0, 1.0));
        let out = solve_classical_3dvar(
            |x| Ok(DVector::from_column_slice(x)),
            &p,
            &FiniteDifference::default(),
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert!((out.x_a - p.x_b()).amax() < 1e-12);
    }

    #[test]
    fn classical_linear_gaussian_closed_form() {
        let g = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, 0.1]);
        let b = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        let r = DMatrix::from_diagonal(&DVector::from_vec(vec![0.2, 0.4, 0.1]));
        let x_b = DVector::from_vec(vec![0.1, -0.2]);
        let y_o = DVector::from_vec(vec![0.8, -0.5, 0.6]);
        let p = AssimilationProblem::new(x_b.clone(), b.clone(), y_o.clone(), r.clone(), vec![(-5.0, 5.0); 2])
            .unwrap();
        let gm = g.clone();
        let out = solve_classical_3dvar(
            move |x| Ok(&gm * DVector::from_column_slice(x)),
            &p,
            &FiniteDifference::default(),
            &OptimizerConfig::default(),
        )
        .unwrap();
        let bi = b.try_inverse().unwrap();
        let ri = r.try_inverse().unwrap();
        let h = (&bi + g.transpose() * &ri * &g).try_inverse().unwrap();
        let expected = &x_b + h * g.transpose() * ri * (&y_o - &g * &x_b);
        assert!((&out.x_a - expected).amax() < 1e-6, "{}", out.x_a);
        assert!(out.model_evaluations >= out.iterations * 4);
        assert!(out.cost_trace.windows(2).all(|w| w[1].cost <= w[0].cost));
    }

    #[test]
    fn model_failure_reports_probe_location() {
        let p = problem(vec![0.0], vec![0.0], (-1.0, 1.0));
        let err = solve_classical_3dvar(
            |x| {
                if x[0] > 0.0 {
                    Err(Error::Numerical("blow-up".into()))
                } else {
                    Ok(DVector::from_column_slice(x))
                }
            },
            &p,
            &FiniteDifference::default(),
            &OptimizerConfig::default(),
        )
        .unwrap_err();
        match err {
            Error::ModelFailure { location, reason } => {
                assert!(location[0] > 0.0);
                assert!(reason.contains("blow-up"));
            }
            other => panic!("unexpected {other}"),
        }
    }
}
