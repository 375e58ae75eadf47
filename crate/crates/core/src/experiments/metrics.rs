use nalgebra::{DMatrix, DVector};

use crate::toymodel::{ParameterSpec, ToyModel, Variable};
use crate::{Error, Result};

/// Componentwise affine map `z = (v − mean) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
}

impl Standardizer {
    pub fn new(mean: DVector<f64>, scale: DVector<f64>) -> Result<Self> {
        if mean.len() != scale.len() {
            return Err(Error::dim("standardizer mean and scale lengths differ".to_string()));
        }
        if scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("standardizer scales must be positive"));
        }
        Ok(Standardizer { mean, scale })
    }

    /// Parameters centred on the prior means and reduced by the prior standard
    /// deviations.
    pub fn from_parameter_table(specs: &[ParameterSpec]) -> Result<Self> {
        Self::new(
            DVector::from_iterator(specs.len(), specs.iter().map(|p| p.mean)),
            DVector::from_iterator(specs.len(), specs.iter().map(|p| p.std)),
        )
    }

    /// Centres every component on its ensemble mean and reduces each group of
    /// components by the group's pooled standard deviation. Columns of
    /// `ensemble` are members.
    pub fn fit_grouped(ensemble: &DMatrix<f64>, groups: &[Vec<usize>]) -> Result<Self> {
        let (m, n) = ensemble.shape();
        if n < 2 {
            return Err(Error::invalid("standardizer needs at least 2 members"));
        }
        let mean = ensemble.column_mean();
        let mut scale = DVector::from_element(m, 1.0);
        let mut covered = vec![false; m];
        for group in groups {
            let mut ss = 0.0;
            for &i in group {
                if i >= m {
                    return Err(Error::dim(format!("group index {i} outside state of length {m}")));
                }
                covered[i] = true;
                ss += ensemble.row(i).iter().map(|v| (v - mean[i]).powi(2)).sum::<f64>();
            }
            let var = ss / (group.len() as f64 * (n as f64 - 1.0));
            let s = if var > 0.0 { var.sqrt() } else { 1.0 };
            for &i in group {
                scale[i] = s;
            }
        }
        if let Some(i) = covered.iter().position(|c| !c) {
            return Err(Error::invalid(format!("state component {i} belongs to no group")));
        }
        Self::new(mean, scale)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        (v - &self.mean).component_div(&self.scale)
    }

    pub fn invert(&self, z: &DVector<f64>) -> DVector<f64> {
        z.component_mul(&self.scale) + &self.mean
    }

    pub fn apply_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for mut col in out.column_iter_mut() {
            col -= &self.mean;
            col.component_div_assign(&self.scale);
        }
        out
    }

    /// Diagonal covariance of standard deviations `sigma` in standardized units.
    pub fn diagonal_covariance(&self, sigma: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&sigma.component_div(&self.scale).map(|v| v * v))
    }

    pub fn interval(&self, i: usize, (lo, hi): (f64, f64)) -> (f64, f64) {
        ((lo - self.mean[i]) / self.scale[i], (hi - self.mean[i]) / self.scale[i])
    }
}

/// Components of each variable, pooled over stations and times.
pub fn variable_groups(model: &ToyModel) -> Vec<Vec<usize>> {
    Variable::ALL
        .iter()
        .map(|&v| (0..model.n_stations()).flat_map(|s| model.series(v, s)).collect())
        .collect()
}

/// Components of each station, over every variable and time.
pub fn station_groups(model: &ToyModel) -> Vec<Vec<usize>> {
    (0..model.n_stations())
        .map(|s| Variable::ALL.iter().flat_map(|&v| model.series(v, s)).collect())
        .collect()
}

/// One group per `(variable, station)` time series.
pub fn series_groups(model: &ToyModel) -> Vec<Vec<usize>> {
    Variable::ALL
        .iter()
        .flat_map(|&v| (0..model.n_stations()).map(move |s| (v, s)))
        .map(|(v, s)| model.series(v, s).collect())
        .collect()
}

fn check_lengths(a: &DVector<f64>, b: &DVector<f64>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    Ok(())
}

/// RMSE between two physical states after standardization.
pub fn rmse_global(y_ref: &DVector<f64>, y_hat: &DVector<f64>, standardizer: &Standardizer) -> Result<f64> {
    check_lengths(y_ref, y_hat)?;
    if y_ref.len() != standardizer.dim() {
        return Err(Error::dim("state and standardizer lengths differ".to_string()));
    }
    Ok(((y_hat - y_ref).component_div(&standardizer.scale).norm_squared() / y_ref.len() as f64).sqrt())
}

/// [`rmse_global`] divided by the RMS of the standardized reference.
pub fn relative_rmse_global(
    y_ref: &DVector<f64>,
    y_hat: &DVector<f64>,
    standardizer: &Standardizer,
) -> Result<f64> {
    let rmse = rmse_global(y_ref, y_hat, standardizer)?;
    let rms = (standardizer.apply(y_ref).norm_squared() / y_ref.len() as f64).sqrt();
    if rms == 0.0 {
        return Err(Error::invalid("relative RMSE is undefined for a zero reference"));
    }
    Ok(rmse / rms)
}

/// Standardized RMSE restricted to each group of components.
pub fn rmse_by(
    y_ref: &DVector<f64>,
    y_hat: &DVector<f64>,
    standardizer: &Standardizer,
    groups: &[Vec<usize>],
) -> Result<Vec<f64>> {
    check_lengths(y_ref, y_hat)?;
    groups
        .iter()
        .map(|g| {
            if g.is_empty() {
                return Err(Error::invalid("empty RMSE group"));
            }
            let ss: f64 = g
                .iter()
                .map(|&i| ((y_hat[i] - y_ref[i]) / standardizer.scale[i]).powi(2))
                .sum();
            Ok((ss / g.len() as f64).sqrt())
        })
        .collect()
}
