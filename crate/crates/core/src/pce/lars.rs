//! Least angle regression with hybrid least-squares re-estimation.
//!
//! The constant column is handled by centering; the remaining columns are
//! centered and scaled to unit norm before the path is traced. Each model on
//! the path is refitted by ordinary least squares on its active set and scored
//! by the corrected leave-one-out error
//!
//! ```text
//! ε_LOO* = T(P, n) · (1/n) Σ_i (r_i / (1 - h_i))²,
//! T(P, n) = n / (n - P) · (1 + tr((ΨᵀΨ)⁻¹))
//! ```
//!
//! where `h_i` are hat-matrix diagonals and `P` counts the intercept. Every
//! quantity is updated incrementally from the inverse Cholesky factor of the
//! active Gram matrix, so a full path costs `O(n K²)`.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// One model of the path (after OLS re-estimation).
#[derive(Debug, Clone, PartialEq)]
pub struct PathModel {
    /// Active columns of the design matrix, in order of entry. The constant
    /// column is implicit.
    pub active: Vec<usize>,
    pub train_mse: f64,
    pub loo_error: f64,
}

#[derive(Debug, Clone)]
pub struct LarsFit {
    /// Coefficients for every column of the design matrix; inactive ones are 0.
    pub coefficients: DVector<f64>,
    /// Active non-constant columns of the selected model.
    pub active: Vec<usize>,
    pub loo_error: f64,
    pub path: Vec<PathModel>,
    pub selected: usize,
}

const RANK_TOL: f64 = 1e-10;

struct Standardized {
    cand: Vec<usize>,
    means: Vec<f64>,
    norms: Vec<f64>,
    z: DMatrix<f64>,
}

fn standardize(psi: &DMatrix<f64>, skip: usize) -> Standardized {
    let n = psi.nrows();
    let mut cand = Vec::new();
    let mut means = Vec::new();
    let mut norms = Vec::new();
    let mut cols = Vec::new();
    for j in 0..psi.ncols() {
        if j == skip {
            continue;
        }
        let col = psi.column(j);
        let mean = col.mean();
        let centered = col.map(|v| v - mean);
        let norm = centered.norm();
        let scale = col.amax().max(1.0) * (n as f64).sqrt();
        if norm <= 1e-12 * scale {
            continue;
        }
        cand.push(j);
        means.push(mean);
        norms.push(norm);
        cols.push(centered / norm);
    }
    let z = if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    Standardized {
        cand,
        means,
        norms,
        z,
    }
}

fn constant_column(psi: &DMatrix<f64>) -> Option<usize> {
    (0..psi.ncols()).find(|&j| {
        let col = psi.column(j);
        let first = col[0];
        first != 0.0 && col.iter().all(|v| (v - first).abs() <= 1e-12 * first.abs())
    })
}

/// Incremental state of the active set.
struct ActiveSet {
    idx: Vec<usize>,
    /// Inverse Cholesky factor of `Z_Aᵀ Z_A`, rows appended as variables enter.
    linv: Vec<Vec<f64>>,
    /// Rows of `W = L⁻¹ Z_Aᵀ` (each of length n).
    w: Vec<DVector<f64>>,
    /// `W y`.
    q: Vec<f64>,
    /// Hat diagonals, including the `1/n` intercept share.
    hat: DVector<f64>,
    /// `‖L⁻¹ m‖²` with `m_c = mean_c / norm_c`.
    mean_term: f64,
    /// `Σ_c ‖L⁻¹[:, c]‖² / norm_c²`.
    trace_term: f64,
}

impl ActiveSet {
    fn new(n: usize) -> Self {
        ActiveSet {
            idx: Vec::new(),
            linv: Vec::new(),
            w: Vec::new(),
            q: Vec::new(),
            hat: DVector::from_element(n, 1.0 / n as f64),
            mean_term: 0.0,
            trace_term: 0.0,
        }
    }

    fn len(&self) -> usize {
        self.idx.len()
    }

    /// Appends column `j`; returns false if it is numerically dependent on the
    /// current active set.
    fn try_add(&mut self, j: usize, s: &Standardized, yc: &DVector<f64>) -> bool {
        let k = self.len();
        let zj = s.z.column(j);
        // g = Z_Aᵀ z_j, l = L⁻¹ g
        let g: Vec<f64> = self.idx.iter().map(|&a| s.z.column(a).dot(&zj)).collect();
        let l: Vec<f64> = self
            .linv
            .iter()
            .map(|row| row.iter().zip(&g).map(|(a, b)| a * b).sum())
            .collect();
        let dd = 1.0 - l.iter().map(|v| v * v).sum::<f64>();
        if dd <= RANK_TOL {
            return false;
        }
        let diag = dd.sqrt();
        // new row of L⁻¹: [-(lᵀ L⁻¹)/diag, 1/diag]
        let mut row = vec![0.0; k + 1];
        for (r, lr) in l.iter().enumerate() {
            for (c, v) in self.linv[r].iter().enumerate() {
                row[c] -= lr * v;
            }
        }
        for v in row.iter_mut().take(k) {
            *v /= diag;
        }
        row[k] = 1.0 / diag;

        let mut w_new = zj.into_owned();
        for (r, lr) in l.iter().enumerate() {
            w_new.axpy(-lr, &self.w[r], 1.0);
        }
        w_new /= diag;

        self.idx.push(j);
        self.q.push(w_new.dot(yc));
        self.hat += w_new.component_mul(&w_new);
        let m_dot: f64 = self
            .idx
            .iter()
            .zip(&row)
            .map(|(&a, v)| v * s.means[a] / s.norms[a])
            .sum();
        self.mean_term += m_dot * m_dot;
        self.trace_term += self
            .idx
            .iter()
            .zip(&row)
            .map(|(&a, v)| v * v / (s.norms[a] * s.norms[a]))
            .sum::<f64>();
        self.linv.push(row);
        self.w.push(w_new);
        true
    }

    /// OLS coefficients on the standardized active columns: `L⁻ᵀ (W y)`.
    fn ols(&self) -> Vec<f64> {
        let k = self.len();
        let mut beta = vec![0.0; k];
        for (r, row) in self.linv.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                beta[c] += v * self.q[r];
            }
        }
        beta
    }

    fn residual(&self, yc: &DVector<f64>) -> DVector<f64> {
        let mut r = yc.clone();
        for (w, q) in self.w.iter().zip(&self.q) {
            r.axpy(-q, w, 1.0);
        }
        r
    }

    /// `(Z_AᵀZ_A)⁻¹ v` through the inverse factor.
    fn gram_solve(&self, v: &[f64]) -> Vec<f64> {
        let k = self.len();
        let t: Vec<f64> = self
            .linv
            .iter()
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect();
        let mut out = vec![0.0; k];
        for (r, row) in self.linv.iter().enumerate() {
            for (c, val) in row.iter().enumerate() {
                out[c] += val * t[r];
            }
        }
        out
    }
}

fn score(active: &ActiveSet, yc: &DVector<f64>, n: usize) -> (f64, f64) {
    let r = active.residual(yc);
    let nf = n as f64;
    let train_mse = r.norm_squared() / nf;
    let p = active.len() + 1;
    if p >= n {
        return (train_mse, f64::INFINITY);
    }
    let mut loo = 0.0;
    for i in 0..n {
        let denom = 1.0 - active.hat[i];
        if denom <= 1e-12 {
            return (train_mse, f64::INFINITY);
        }
        loo += (r[i] / denom).powi(2);
    }
    loo /= nf;
    // tr((ΨᵀΨ)⁻¹) for Ψ = [1, X_A] in the original column scaling.
    let trace_inv = 1.0 / nf + active.mean_term + active.trace_term;
    let correction = nf / (nf - p as f64) * (1.0 + trace_inv);
    (train_mse, loo * correction)
}

/// Traces the LARS path over the columns of `psi` and returns the model with
/// the smallest corrected leave-one-out error (or the last path model when
/// `loo_selection` is false).
///
/// The path stops at `n - 2` non-constant terms so the intercept plus active
/// set never exhausts the samples.
pub fn fit_lars(psi: &DMatrix<f64>, targets: &DVector<f64>, loo_selection: bool) -> Result<LarsFit> {
    let n = psi.nrows();
    if n < 2 {
        return Err(Error::invalid(format!("LARS needs at least 2 samples, got {n}")));
    }
    if targets.len() != n {
        return Err(Error::dim(format!(
            "{} targets for a design matrix with {n} rows",
            targets.len()
        )));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite regression target"));
    }
    let Some(const_col) = constant_column(psi) else {
        return Err(Error::invalid("design matrix has no constant column"));
    };
    let s = standardize(psi, const_col);
    let k_total = s.cand.len();
    let ybar = targets.mean();
    let yc = targets.map(|v| v - ybar);

    let mut active = ActiveSet::new(n);
    let mut in_active = vec![false; k_total];
    let mut excluded = vec![false; k_total];
    let mut snapshots: Vec<(Vec<usize>, Vec<f64>)> = vec![(Vec::new(), Vec::new())];
    let (mse0, loo0) = score(&active, &yc, n);
    let mut path = vec![PathModel {
        active: Vec::new(),
        train_mse: mse0,
        loo_error: loo0,
    }];

    let max_active = k_total.min(n.saturating_sub(2));
    let mut r = yc.clone();
    let mut c = s.z.tr_mul(&r);
    let c0 = c.amax();
    let y_scale = yc.norm_squared();
    let pick = |c: &DVector<f64>, in_active: &[bool], excluded: &[bool]| {
        (0..k_total)
            .filter(|&j| !in_active[j] && !excluded[j])
            .max_by(|&a, &b| c[a].abs().total_cmp(&c[b].abs()).then(b.cmp(&a)))
    };
    let mut pending = if c0 > 0.0 { pick(&c, &in_active, &excluded) } else { None };

    while let Some(j) = pending {
        if active.len() >= max_active {
            break;
        }
        if !active.try_add(j, &s, &yc) {
            excluded[j] = true;
            pending = pick(&c, &in_active, &excluded);
            continue;
        }
        in_active[j] = true;
        let (train_mse, loo_error) = score(&active, &yc, n);
        path.push(PathModel {
            active: active.idx.iter().map(|&a| s.cand[a]).collect(),
            train_mse,
            loo_error,
        });
        snapshots.push((active.idx.clone(), active.ols()));

        if active.len() >= max_active || train_mse * n as f64 <= 1e-28 * y_scale {
            break;
        }

        // Equiangular step.
        c = s.z.tr_mul(&r);
        let big_c = active.idx.iter().map(|&a| c[a].abs()).fold(0.0, f64::max);
        if big_c <= 1e-13 * c0 {
            break;
        }
        let signs: Vec<f64> = active.idx.iter().map(|&a| c[a].signum()).collect();
        let v = active.gram_solve(&signs);
        let sv: f64 = signs.iter().zip(&v).map(|(a, b)| a * b).sum();
        if sv <= 0.0 {
            break;
        }
        let a_a = 1.0 / sv.sqrt();
        let mut u = DVector::zeros(n);
        for (&a, vi) in active.idx.iter().zip(&v) {
            u.axpy(a_a * vi, &s.z.column(a), 1.0);
        }
        let a_vec = s.z.tr_mul(&u);
        let mut gamma = f64::INFINITY;
        let mut next = None;
        for jj in 0..k_total {
            if in_active[jj] || excluded[jj] {
                continue;
            }
            for cand in [
                (big_c - c[jj]) / (a_a - a_vec[jj]),
                (big_c + c[jj]) / (a_a + a_vec[jj]),
            ] {
                if cand.is_finite() && cand > 1e-14 && cand < gamma {
                    gamma = cand;
                    next = Some(jj);
                }
            }
        }
        if next.is_none() {
            break;
        }
        r.axpy(-gamma, &u, 1.0);
        c = s.z.tr_mul(&r);
        pending = next;
    }

    let selected = if loo_selection {
        let floor = 1e-20 * y_scale / n as f64;
        let mut best = 0;
        for (i, m) in path.iter().enumerate() {
            if m.loo_error.max(floor) < path[best].loo_error.max(floor) {
                best = i;
            }
        }
        best
    } else {
        path.len() - 1
    };

    let (idx, beta_std) = &snapshots[selected];
    let mut coefficients = DVector::zeros(psi.ncols());
    let mut intercept = ybar;
    for (&a, b) in idx.iter().zip(beta_std) {
        let coef = b / s.norms[a];
        coefficients[s.cand[a]] = coef;
        intercept -= coef * s.means[a];
    }
    coefficients[const_col] = intercept / psi[(0, const_col)];

    Ok(LarsFit {
        coefficients,
        active: path[selected].active.clone(),
        loo_error: path[selected].loo_error,
        path,
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pce::{design_matrix, multi_index_set, InputTransform};
    use crate::rng::{stream, Substream};
    use rand::Rng;

    fn uniform_samples(n: usize, dim: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream(seed, Substream::Test);
        DMatrix::from_fn(n, dim, |_, _| rng.random_range(-1.0..=1.0))
    }

    fn unit_transforms(dim: usize) -> Vec<InputTransform> {
        vec![InputTransform::uniform(-1.0, 1.0).unwrap(); dim]
    }

    #[test]
    fn exact_single_term_target() {
        let x = uniform_samples(60, 2, 1);
        let idx = multi_index_set(2, 3);
        let psi = design_matrix(&x, &idx, &unit_transforms(2)).unwrap();
        let col = idx.iter().position(|a| a.exponents() == [2, 0]).unwrap();
        let y = psi.column(col) * 2.5;
        let fit = fit_lars(&psi, &y, true).unwrap();
        assert_eq!(fit.active, vec![col]);
        assert!((fit.coefficients[col] - 2.5).abs() < 1e-8);
        for (j, c) in fit.coefficients.iter().enumerate() {
            if j != col {
                assert!(c.abs() < 1e-10, "column {j} coefficient {c}");
            }
        }
    }

    #[test]
    fn zero_targets_give_empty_model() {
        let x = uniform_samples(30, 2, 2);
        let psi = design_matrix(&x, &multi_index_set(2, 2), &unit_transforms(2)).unwrap();
        let fit = fit_lars(&psi, &DVector::zeros(30), true).unwrap();
        assert!(fit.active.is_empty());
        assert_eq!(fit.loo_error, 0.0);
        assert!(fit.coefficients.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn path_is_monotone_and_loo_dominates_training_error() {
        let x = uniform_samples(80, 3, 3);
        let psi = design_matrix(&x, &multi_index_set(3, 3), &unit_transforms(3)).unwrap();
        let mut rng = stream(3, Substream::Noise);
        let y = DVector::from_fn(80, |i, _| {
            (x[(i, 0)] * 2.0).sin() + x[(i, 1)] * x[(i, 2)] + 0.05 * rng.random_range(-1.0..1.0)
        });
        let fit = fit_lars(&psi, &y, true).unwrap();
        for w in fit.path.windows(2) {
            assert!(w[1].active.len() >= w[0].active.len());
            assert!(w[1].active.starts_with(&w[0].active));
        }
        for m in &fit.path {
            assert!(m.loo_error >= m.train_mse, "{m:?}");
        }
        // the final path model is the OLS fit when not selecting
        let full = fit_lars(&psi, &y, false).unwrap();
        assert_eq!(full.selected, full.path.len() - 1);
    }

    #[test]
    fn loo_matches_brute_force_refits() {
        // Plain LOO from the hat identity equals explicit leave-one-out OLS.
        let x = uniform_samples(25, 2, 4);
        let psi = design_matrix(&x, &multi_index_set(2, 2), &unit_transforms(2)).unwrap();
        let mut rng = stream(4, Substream::Noise);
        let y = DVector::from_fn(25, |_, _| rng.random_range(-1.0..1.0));
        let fit = fit_lars(&psi, &y, false).unwrap();
        let last = fit.path.last().unwrap();
        let mut cols = vec![0usize];
        cols.extend(&last.active);
        let sub = psi.select_columns(&cols);
        let mut brute = 0.0;
        for i in 0..25 {
            let keep: Vec<usize> = (0..25).filter(|&r| r != i).collect();
            let a = sub.select_rows(&keep);
            let b = y.select_rows(&keep);
            let beta = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * b));
            brute += (y[i] - (sub.row(i) * beta)[0]).powi(2);
        }
        brute /= 25.0;
        let gram_inv = (sub.transpose() * &sub).try_inverse().unwrap();
        let p = cols.len() as f64;
        let t = 25.0 / (25.0 - p) * (1.0 + gram_inv.trace());
        assert!((last.loo_error / t - brute).abs() < 1e-10 * brute);
    }
}
