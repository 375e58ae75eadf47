//! Projected limited-memory BFGS for box-constrained minimization.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Stop when the projected gradient norm falls to this value.
    pub tol: f64,
    /// Stop when `(f_k − f_{k+1}) ≤ ftol · max(|f_k|, |f_{k+1}|, 1)`. Zero
    /// disables the test.
    pub ftol: f64,
    pub max_iter: usize,
    /// Number of stored correction pairs.
    pub memory: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            tol: 1e-8,
            ftol: 1e-12,
            max_iter: 500,
            memory: 10,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.ftol >= 0.0) || self.memory == 0 {
            return Err(Error::invalid(
                "optimizer needs tol > 0, ftol ≥ 0 and a positive memory",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub cost: f64,
    pub projected_gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: DVector<f64>,
    pub cost: f64,
    /// One entry for the start point and one per accepted iteration.
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub reason: String,
}

fn project(x: &mut DVector<f64>, bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

fn projected_gradient(x: &DVector<f64>, g: &DVector<f64>, bounds: &[(f64, f64)]) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| (x[i] - g[i]).clamp(bounds[i].0, bounds[i].1) - x[i])
}

/// Variables not held at a bound by an outward-pointing gradient.
fn free_mask(x: &DVector<f64>, g: &DVector<f64>, bounds: &[(f64, f64)]) -> Vec<bool> {
    (0..x.len())
        .map(|i| {
            let (lo, hi) = bounds[i];
            !((x[i] <= lo && g[i] > 0.0) || (x[i] >= hi && g[i] < 0.0))
        })
        .collect()
}

fn masked(v: &DVector<f64>, mask: &[bool]) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| if mask[i] { v[i] } else { 0.0 })
}

fn two_loop(
    g: &DVector<f64>,
    pairs: &VecDeque<(DVector<f64>, DVector<f64>)>,
    mask: &[bool],
) -> DVector<f64> {
    let mut q = masked(g, mask);
    let mut alphas = Vec::with_capacity(pairs.len());
    let reduced: Vec<(DVector<f64>, DVector<f64>, f64)> = pairs
        .iter()
        .filter_map(|(s, y)| {
            let (s, y) = (masked(s, mask), masked(y, mask));
            let sy = s.dot(&y);
            (sy > 1e-12 * s.norm() * y.norm() && sy > 0.0).then(|| {
                let rho = 1.0 / sy;
                (s, y, rho)
            })
        })
        .collect();
    for (s, y, rho) in reduced.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y, _)) = reduced.last() {
        q *= s.dot(y) / y.norm_squared();
    }
    for ((s, y, rho), a) in reduced.iter().zip(alphas.iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s, 1.0);
    }
    -masked(&q, mask)
}

/// Minimizes `f` over the box `bounds` starting from `x0`.
///
/// `f_grad` returns the value and gradient at a point. Infinite bounds are
/// allowed. The cost trace is nonincreasing.
pub fn bounded_quasi_newton<F>(
    mut f_grad: F,
    x0: &DVector<f64>,
    bounds: &[(f64, f64)],
    config: &OptimizerConfig,
) -> Result<OptimResult>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    config.validate()?;
    if bounds.len() != x0.len() {
        return Err(Error::dim(format!(
            "{} bounds for {} variables",
            bounds.len(),
            x0.len()
        )));
    }
    for (i, (&v, &(lo, hi))) in x0.iter().zip(bounds).enumerate() {
        if !(lo <= hi) {
            return Err(Error::invalid(format!("empty bound interval for variable {i}")));
        }
        if !(v >= lo && v <= hi) {
            return Err(Error::OutOfBounds {
                index: i,
                value: v,
                lo,
                hi,
            });
        }
    }

    let mut evaluations = 0usize;
    let mut eval = |x: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        evaluations += 1;
        f_grad(x)
    };

    let mut x = x0.clone();
    let (mut f, mut g) = eval(&x)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "cost or gradient is not finite at the starting point".into(),
        ));
    }
    let mut pg_norm = projected_gradient(&x, &g, bounds).norm();
    let mut trace = vec![TraceEntry {
        cost: f,
        projected_gradient_norm: pg_norm,
    }];
    let mut pairs: VecDeque<(DVector<f64>, DVector<f64>)> = VecDeque::new();
    let mut iterations = 0;

    let finish = |x, f, trace, iterations, evaluations, converged, reason: &str| OptimResult {
        x,
        cost: f,
        trace,
        iterations,
        evaluations,
        converged,
        reason: reason.to_string(),
    };

    loop {
        if pg_norm <= config.tol {
            return Ok(finish(x, f, trace, iterations, evaluations, true, "projected gradient below tolerance"));
        }
        if iterations >= config.max_iter {
            return Ok(finish(x, f, trace, iterations, evaluations, false, "maximum iterations reached"));
        }
        let mask = free_mask(&x, &g, bounds);
        let steepest = -masked(&g, &mask);
        let mut direction = two_loop(&g, &pairs, &mask);
        let mut is_steepest = pairs.is_empty();
        if !(g.dot(&direction) < 0.0) {
            direction = steepest.clone();
            is_steepest = true;
        }

        let accepted = loop {
            let mut step = if is_steepest && pairs.is_empty() {
                (1.0 / direction.amax()).min(1.0)
            } else {
                1.0
            };
            let mut found = None;
            for _ in 0..60 {
                let mut trial = &x + &direction * step;
                project(&mut trial, bounds);
                let moved = &trial - &x;
                if moved.amax() == 0.0 {
                    break;
                }
                let (ft, gt) = eval(&trial)?;
                if !ft.is_finite() || gt.iter().any(|v| !v.is_finite()) {
                    step *= 0.5;
                    continue;
                }
                let armijo = ft <= f + 1e-4 * g.dot(&moved).min(0.0);
                // at the rounding floor of f, progress is measured by the gradient
                let flat = ft <= f && projected_gradient(&trial, &gt, bounds).norm() < pg_norm;
                if armijo || flat {
                    found = Some((trial, ft, gt));
                    break;
                }
                step *= 0.5;
            }
            match found {
                Some(hit) => break Some(hit),
                None if !is_steepest => {
                    direction = steepest.clone();
                    is_steepest = true;
                    pairs.clear();
                }
                None => break None,
            }
        };

        let Some((x_new, f_new, g_new)) = accepted else {
            return Ok(finish(x, f, trace, iterations, evaluations, false, "line search failed"));
        };
        iterations += 1;
        let s = &x_new - &x;
        let y = &g_new - &g;
        if s.dot(&y) > 1e-12 * s.norm() * y.norm() {
            if pairs.len() == config.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y));
        }
        let decrease = f - f_new;
        x = x_new;
        g = g_new;
        let f_old = f;
        f = f_new;
        pg_norm = projected_gradient(&x, &g, bounds).norm();
        trace.push(TraceEntry {
            cost: f,
            projected_gradient_norm: pg_norm,
        });
        if pg_norm > config.tol
            && config.ftol > 0.0
            && decrease <= config.ftol * f_old.abs().max(f_new.abs()).max(1.0)
        {
            return Ok(finish(x, f, trace, iterations, evaluations, true, "relative cost decrease below ftol"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(c: DVector<f64>) -> impl FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)> {
        move |x| {
            let r = x - &c;
            Ok((r.norm_squared(), r * 2.0))
        }
    }

    #[test]
    fn interior_minimum() {
        let c = DVector::from_vec(vec![0.3, -0.7, 1.2]);
        let bounds = vec![(-2.0, 2.0); 3];
        let out = bounded_quasi_newton(quadratic(c.clone()), &DVector::zeros(3), &bounds, &OptimizerConfig::default())
            .unwrap();
        assert!(out.converged);
        assert!((out.x - c).amax() < 1e-8);
    }

    #[test]
    fn minimum_outside_the_box_is_projected() {
        let c = DVector::from_vec(vec![3.0, -0.5, -4.0]);
        let bounds = vec![(-1.0, 1.0); 3];
        let out = bounded_quasi_newton(quadratic(c), &DVector::zeros(3), &bounds, &OptimizerConfig::default())
            .unwrap();
        assert!((out.x - DVector::from_vec(vec![1.0, -0.5, -1.0])).amax() < 1e-8);
        assert!(out.trace.windows(2).all(|w| w[1].cost <= w[0].cost));
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ]);
            Ok((v, g))
        };
        let cfg = OptimizerConfig {
            ftol: 0.0,
            ..OptimizerConfig::default()
        };
        let out = bounded_quasi_newton(f, &DVector::from_vec(vec![-1.2, 1.0]), &[(-2.0, 2.0); 2], &cfg).unwrap();
        assert!((&out.x - DVector::from_vec(vec![1.0, 1.0])).amax() < 1e-5, "{:?}", out.x);
        assert!(out.trace.windows(2).all(|w| w[1].cost <= w[0].cost));
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let f = |_: &DVector<f64>| Ok((f64::NAN, DVector::zeros(1)));
        let err = bounded_quasi_newton(f, &DVector::zeros(1), &[(-1.0, 1.0)], &OptimizerConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let cfg = OptimizerConfig {
            max_iter: 1,
            ..OptimizerConfig::default()
        };
        let f = |x: &DVector<f64>| {
            let v = (x[0] - 0.5).powi(4) + (x[0] * x[1]).powi(2) + x[1].powi(2);
            let g = DVector::from_vec(vec![
                4.0 * (x[0] - 0.5).powi(3) + 2.0 * x[0] * x[1] * x[1],
                2.0 * x[0] * x[0] * x[1] + 2.0 * x[1],
            ]);
            Ok((v, g))
        };
        let out = bounded_quasi_newton(f, &DVector::from_vec(vec![-1.0, 1.0]), &[(-2.0, 2.0); 2], &cfg).unwrap();
        assert!(!out.converged);
        assert_eq!(out.reason, "maximum iterations reached");
    }
}
