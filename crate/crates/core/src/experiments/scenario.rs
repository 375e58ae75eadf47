use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::metrics::{variable_groups, Standardizer};
use crate::exec::Execution;
use crate::pce::InputTransform;
use crate::rng::{stream, Substream};
use crate::toymodel::{sample_parameters, ToyModel, Variable};
use crate::{Error, Result};

/// Toy model together with a nested training pool, everything expressed in
/// standardized coordinates.
///
/// Parameters are standardized with the prior table (mean, std); states are
/// centred per component and reduced by the pooled standard deviation of each
/// variable over the first `reference_members` pool members. Surrogates and
/// solvers only ever see standardized quantities.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: ToyModel,
    pub params: Standardizer,
    pub states: Standardizer,
    /// Calibration box in standardized parameter units.
    pub bounds: Vec<(f64, f64)>,
    pub transforms: Vec<InputTransform>,
    /// Standardized pool parameters, `m_x × N`.
    pub pool_x: DMatrix<f64>,
    /// Standardized pool states, `m_y × N`.
    pub pool_y: DMatrix<f64>,
}

impl Scenario {
    pub fn new(
        model: ToyModel,
        pool_size: usize,
        reference_members: usize,
        seed: u64,
        exec: Execution,
    ) -> Result<Self> {
        if pool_size < reference_members {
            return Err(Error::invalid(format!(
                "pool of {pool_size} members is smaller than the {reference_members} reference members"
            )));
        }
        let params = Standardizer::from_parameter_table(&model.parameters)?;
        let bounds: Vec<(f64, f64)> = model
            .bounds()
            .into_iter()
            .enumerate()
            .map(|(i, b)| params.interval(i, b))
            .collect();
        let transforms = bounds
            .iter()
            .map(|&(lo, hi)| InputTransform::uniform(lo, hi))
            .collect::<Result<Vec<_>>>()?;
        let raw_x = sample_parameters(&model.bounds(), pool_size, seed)?;
        let raw_y = model.simulate_ensemble(&raw_x, exec)?;
        let reference = raw_y.columns(0, reference_members).into_owned();
        let states = Standardizer::fit_grouped(&reference, &variable_groups(&model))?;
        let pool_x = params.apply_columns(&raw_x.transpose());
        let pool_y = states.apply_columns(&raw_y);
        Ok(Scenario {
            model,
            params,
            states,
            bounds,
            transforms,
            pool_x,
            pool_y,
        })
    }

    pub fn pool_size(&self) -> usize {
        self.pool_x.ncols()
    }

    pub fn param_dim(&self) -> usize {
        self.pool_x.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.pool_y.nrows()
    }

    /// First `n` pool members.
    pub fn members(&self, n: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if n > self.pool_size() {
            return Err(Error::invalid(format!(
                "{n} members requested from a pool of {}",
                self.pool_size()
            )));
        }
        Ok((
            self.pool_x.columns(0, n).into_owned(),
            self.pool_y.columns(0, n).into_owned(),
        ))
    }

    /// Pool members at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.pool_x.select_columns(indices), self.pool_y.select_columns(indices))
    }

    pub fn to_physical_params(&self, z: &DVector<f64>) -> DVector<f64> {
        self.params.invert(z)
    }

    pub fn to_standard_params(&self, x: &DVector<f64>) -> DVector<f64> {
        self.params.apply(x)
    }

    /// Physical model output at standardized parameters.
    pub fn simulate(&self, z: &[f64]) -> Result<DVector<f64>> {
        let x = self.params.invert(&DVector::from_column_slice(z));
        self.model.simulate_slice(x.as_slice())
    }

    /// Standardized model output at standardized parameters.
    pub fn forward(&self, z: &[f64]) -> Result<DVector<f64>> {
        Ok(self.states.apply(&self.simulate(z)?))
    }

    /// Truth in standardized units: the configured physical values, or a
    /// uniform draw in the box from the truth substream.
    pub fn truth(&self, given: Option<&[f64]>, seed: u64) -> Result<DVector<f64>> {
        match given {
            Some(x) => {
                self.model.check_params(x)?;
                Ok(self.params.apply(&DVector::from_column_slice(x)))
            }
            None => {
                let mut rng = stream(seed, Substream::Truth);
                Ok(DVector::from_iterator(
                    self.bounds.len(),
                    self.bounds.iter().map(|&(lo, hi)| rng.random_range(lo..hi)),
                ))
            }
        }
    }

    /// One index range per `(variable, station)` series.
    pub fn series(&self) -> Vec<Range<usize>> {
        Variable::ALL
            .iter()
            .flat_map(|&v| (0..self.model.n_stations()).map(move |s| (v, s)))
            .map(|(v, s)| self.model.series(v, s))
            .collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.model.parameters.iter().map(|p| p.name.clone()).collect()
    }

    pub fn station_ids(&self) -> Vec<String> {
        self.model.stations.iter().map(|s| s.id.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardized_bounds_and_nested_pool() {
        let small = Scenario::new(ToyModel::default(), 20, 10, 3, Execution::Sequential).unwrap();
        let large = Scenario::new(ToyModel::default(), 40, 10, 3, Execution::Sequential).unwrap();
        for &(lo, hi) in &small.bounds {
            assert!((lo + 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        }
        assert_eq!(small.pool_x, large.pool_x.columns(0, 20).into_owned());
        assert_eq!(small.pool_y, large.pool_y.columns(0, 20).into_owned());
    }

    #[test]
    fn forward_matches_pool() {
        let sc = Scenario::new(ToyModel::default(), 5, 5, 1, Execution::Sequential).unwrap();
        let z: Vec<f64> = sc.pool_x.column(2).iter().copied().collect();
        let y = sc.forward(&z).unwrap();
        assert!((y - sc.pool_y.column(2)).amax() < 1e-10);
    }
}
