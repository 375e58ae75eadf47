use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::basis::{
    binomial, design_matrix, input_tables, multi_index_set, univariate_derivative_table,
    InputTransform, MultiIndex,
};
use super::lars::fit_lars;
use crate::exec::Execution;
use crate::rng::{stream, Substream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PceConfig {
    /// Largest total degree tried during degree selection.
    pub max_degree: usize,
    /// Fraction of members used for training; the rest validate.
    pub train_fraction: f64,
    /// Pick the path model with the smallest corrected LOO error. When false
    /// the full least-squares model at the end of the path is kept.
    pub loo_selection: bool,
}

impl Default for PceConfig {
    fn default() -> Self {
        PceConfig {
            max_degree: 6,
            train_fraction: 0.75,
            loo_selection: true,
        }
    }
}

impl PceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Multivariate polynomial chaos expansion with one coefficient row per output.
#[derive(Debug, Clone, PartialEq)]
pub struct PceModel {
    pub(crate) transforms: Vec<InputTransform>,
    pub(crate) max_degree: usize,
    pub(crate) indices: Vec<MultiIndex>,
    pub(crate) coefficients: DMatrix<f64>,
    pub(crate) empirical_errors: DVector<f64>,
    pub(crate) validation_bias: DVector<f64>,
    pub(crate) degrees: Vec<usize>,
    pub(crate) loo_errors: DVector<f64>,
}

/// Per-output diagnostics of the degree search.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeSelection {
    pub degree: usize,
    pub empirical_error: f64,
    pub validation_bias: f64,
    pub loo_error: f64,
    /// Validation error for every degree tried, indexed by degree.
    pub errors_by_degree: Vec<f64>,
}

impl PceModel {
    /// Builds a model from coefficients over the full total-degree set of
    /// `max_degree`. Diagnostics are set to zero.
    pub fn from_coefficients(
        transforms: Vec<InputTransform>,
        max_degree: usize,
        coefficients: DMatrix<f64>,
    ) -> Result<Self> {
        if transforms.is_empty() {
            return Err(Error::invalid("expansion needs at least one input"));
        }
        let indices = multi_index_set(transforms.len(), max_degree);
        if coefficients.ncols() != indices.len() {
            return Err(Error::dim(format!(
                "{} coefficient columns for {} basis terms",
                coefficients.ncols(),
                indices.len()
            )));
        }
        let d = coefficients.nrows();
        Ok(PceModel {
            transforms,
            max_degree,
            indices,
            coefficients,
            empirical_errors: DVector::zeros(d),
            validation_bias: DVector::zeros(d),
            degrees: vec![max_degree; d],
            loo_errors: DVector::zeros(d),
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_stored(
        transforms: Vec<InputTransform>,
        max_degree: usize,
        indices: Vec<MultiIndex>,
        coefficients: DMatrix<f64>,
        empirical_errors: DVector<f64>,
        validation_bias: DVector<f64>,
        degrees: Vec<usize>,
        loo_errors: DVector<f64>,
    ) -> Result<Self> {
        let d = coefficients.nrows();
        if indices != multi_index_set(transforms.len(), max_degree) {
            return Err(Error::invalid(
                "stored index set is not the total-degree set of the stored degree",
            ));
        }
        if coefficients.ncols() != indices.len()
            || empirical_errors.len() != d
            || validation_bias.len() != d
            || degrees.len() != d
            || loo_errors.len() != d
        {
            return Err(Error::dim("inconsistent expansion fields".to_string()));
        }
        Ok(PceModel {
            transforms,
            max_degree,
            indices,
            coefficients,
            empirical_errors,
            validation_bias,
            degrees,
            loo_errors,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.transforms.len()
    }

    pub fn output_dim(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn transforms(&self) -> &[InputTransform] {
        &self.transforms
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    /// Validation mean squared error `δ_emp` per output.
    pub fn empirical_errors(&self) -> &DVector<f64> {
        &self.empirical_errors
    }

    /// Validation mean of `ν − ν̃` per output.
    pub fn validation_bias(&self) -> &DVector<f64> {
        &self.validation_bias
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn loo_errors(&self) -> &DVector<f64> {
        &self.loo_errors
    }

    /// Keeps the first `d` outputs.
    pub fn truncate_outputs(&self, d: usize) -> Result<PceModel> {
        if d == 0 || d > self.output_dim() {
            return Err(Error::invalid(format!(
                "cannot keep {d} of {} outputs",
                self.output_dim()
            )));
        }
        let degrees = self.degrees[..d].to_vec();
        let p = degrees.iter().copied().max().unwrap_or(0);
        let terms = binomial(self.input_dim() + p, p);
        Ok(PceModel {
            transforms: self.transforms.clone(),
            max_degree: p,
            indices: self.indices[..terms].to_vec(),
            coefficients: self.coefficients.view((0, 0), (d, terms)).into_owned(),
            empirical_errors: self.empirical_errors.rows(0, d).into_owned(),
            validation_bias: self.validation_bias.rows(0, d).into_owned(),
            degrees,
            loo_errors: self.loo_errors.rows(0, d).into_owned(),
        })
    }

    /// `ζ(T(x))` for every basis term.
    pub fn basis_values(&self, x: &[f64]) -> Result<DVector<f64>> {
        let tables = input_tables(x, &self.transforms, self.max_degree)?;
        Ok(DVector::from_iterator(
            self.indices.len(),
            self.indices.iter().map(|alpha| {
                alpha
                    .exponents()
                    .iter()
                    .zip(&tables)
                    .map(|(&a, tab)| tab[a])
                    .product::<f64>()
            }),
        ))
    }

    /// `∂ζ_α/∂x_i` as an `n_terms × m_x` matrix.
    pub fn basis_gradient(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let tables = input_tables(x, &self.transforms, self.max_degree)?;
        let dtables: Vec<Vec<f64>> = x
            .iter()
            .zip(&self.transforms)
            .map(|(&xi, tr)| {
                let slope = tr.slope();
                univariate_derivative_table(tr.family(), self.max_degree, tr.to_standard(xi))
                    .into_iter()
                    .map(|v| v * slope)
                    .collect()
            })
            .collect();
        let m = x.len();
        let mut g = DMatrix::zeros(self.indices.len(), m);
        for (row, alpha) in self.indices.iter().enumerate() {
            let e = alpha.exponents();
            for i in 0..m {
                if e[i] == 0 {
                    continue;
                }
                let mut v = dtables[i][e[i]];
                for (j, &a) in e.iter().enumerate() {
                    if j != i {
                        v *= tables[j][a];
                    }
                }
                g[(row, i)] = v;
            }
        }
        Ok(g)
    }

    /// `ν̃(x) = C ζ(T(x))`.
    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(&self.coefficients * self.basis_values(x)?)
    }

    /// `∂ν̃_k/∂x_i` as a `d × m_x` matrix.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(&self.coefficients * self.basis_gradient(x)?)
    }

    /// Evaluates every row of `samples`, returning one output row per sample.
    pub fn eval_rows(&self, samples: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let psi = design_matrix(samples, &self.indices, &self.transforms)?;
        Ok(psi * self.coefficients.transpose())
    }
}

/// Deterministic shuffle of `0..n` split into training and validation
/// members. Both parts are returned sorted.
pub fn train_validation_split(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = ((n as f64) * train_fraction).round() as usize;
    if n_train < 2 || n_train >= n {
        return Err(Error::invalid(format!(
            "cannot split {n} members into training and validation sets"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Substream::Split));
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Fits one expansion per target column, choosing each column's total degree
/// in `0..=max_degree` by validation error. Ties go to the smaller degree.
///
/// Samples are rows of `train_x`/`val_x`; targets are rows of
/// `train_y`/`val_y` with one column per output.
pub fn select_degree(
    train_x: &DMatrix<f64>,
    train_y: &DMatrix<f64>,
    val_x: &DMatrix<f64>,
    val_y: &DMatrix<f64>,
    transforms: &[InputTransform],
    config: &PceConfig,
    exec: Execution,
) -> Result<(PceModel, Vec<DegreeSelection>)> {
    let m = transforms.len();
    if m == 0 {
        return Err(Error::invalid("expansion needs at least one input"));
    }
    if val_x.nrows() == 0 {
        return Err(Error::invalid(
            "validation set is empty, empirical error undefined",
        ));
    }
    if train_x.nrows() < 2 {
        return Err(Error::invalid("training set needs at least 2 members"));
    }
    for (name, x, y) in [("training", train_x, train_y), ("validation", val_x, val_y)] {
        if x.ncols() != m {
            return Err(Error::dim(format!(
                "{name} samples have {} inputs, expected {m}",
                x.ncols()
            )));
        }
        if y.nrows() != x.nrows() {
            return Err(Error::dim(format!(
                "{name} set has {} samples but {} target rows",
                x.nrows(),
                y.nrows()
            )));
        }
    }
    if train_y.ncols() != val_y.ncols() || train_y.ncols() == 0 {
        return Err(Error::dim("training and validation outputs differ".to_string()));
    }

    let p_max = config.max_degree;
    let indices = multi_index_set(m, p_max);
    let psi_train = design_matrix(train_x, &indices, transforms)?;
    let psi_val = design_matrix(val_x, &indices, transforms)?;
    let term_counts: Vec<usize> = (0..=p_max).map(|p| binomial(m + p, p)).collect();

    let fit_output = |k: usize| -> Result<(DVector<f64>, DegreeSelection)> {
        let y_train = train_y.column(k).into_owned();
        let y_val = val_y.column(k).into_owned();
        let nv = y_val.len() as f64;
        let scale = y_val.norm_squared() / nv;
        let mut best: Option<(usize, f64, f64, f64, DVector<f64>)> = None;
        let mut errors = Vec::with_capacity(p_max + 1);
        for (p, &terms) in term_counts.iter().enumerate() {
            let psi = psi_train.columns(0, terms).into_owned();
            let fit = fit_lars(&psi, &y_train, config.loo_selection)?;
            let resid = &y_val - psi_val.columns(0, terms) * &fit.coefficients;
            let delta = resid.norm_squared() / nv;
            let bias = resid.sum() / nv;
            errors.push(delta);
            let better = match &best {
                None => true,
                Some((_, b, ..)) => delta < b - (1e-9 * b + 1e-20 * scale),
            };
            if better {
                best = Some((p, delta, bias, fit.loo_error, fit.coefficients));
            }
        }
        let (degree, empirical_error, validation_bias, loo_error, coef) =
            best.expect("at least degree 0 is tried");
        let mut row = DVector::zeros(indices.len());
        row.rows_mut(0, coef.len()).copy_from(&coef);
        Ok((
            row,
            DegreeSelection {
                degree,
                empirical_error,
                validation_bias,
                loo_error,
                errors_by_degree: errors,
            },
        ))
    };

    let results = exec.map_range(train_y.ncols(), fit_output);
    let mut rows = Vec::with_capacity(results.len());
    let mut selections = Vec::with_capacity(results.len());
    for r in results {
        let (row, sel) = r?;
        rows.push(row.transpose());
        selections.push(sel);
    }
    let chosen = selections.iter().map(|s| s.degree).max().unwrap_or(0);
    let terms = term_counts[chosen];
    let full = DMatrix::from_rows(&rows);
    let model = PceModel {
        transforms: transforms.to_vec(),
        max_degree: chosen,
        indices: indices[..terms].to_vec(),
        coefficients: full.columns(0, terms).into_owned(),
        empirical_errors: DVector::from_iterator(
            selections.len(),
            selections.iter().map(|s| s.empirical_error),
        ),
        validation_bias: DVector::from_iterator(
            selections.len(),
            selections.iter().map(|s| s.validation_bias),
        ),
        degrees: selections.iter().map(|s| s.degree).collect(),
        loo_errors: DVector::from_iterator(selections.len(), selections.iter().map(|s| s.loo_error)),
    };
    Ok((model, selections))
}
