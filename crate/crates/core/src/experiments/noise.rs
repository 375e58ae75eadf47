use std::ops::Range;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::{stream, Substream};
use crate::{Error, Result};

/// Perturbed observation and the standard deviations used to draw it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyObservation {
    pub y_o: DVector<f64>,
    /// Per-component noise standard deviation; `R = diag(sigma²)`.
    pub sigma: DVector<f64>,
    /// Series whose standard deviation was zero and had to be floored.
    pub floored_series: Vec<usize>,
}

/// `level` times the standard deviation over time of each series, spread to
/// the series' components. Constant series get `level·1e-6·|mean| + 1e-12`
/// and are listed in the second return value.
pub fn series_sigma(
    y: &DVector<f64>,
    series: &[Range<usize>],
    level: f64,
) -> Result<(DVector<f64>, Vec<usize>)> {
    let mut sigma = DVector::from_element(y.len(), f64::NAN);
    let mut floored = Vec::new();
    for (k, range) in series.iter().enumerate() {
        if range.end > y.len() || range.is_empty() {
            return Err(Error::dim(format!("series {k} does not fit the state")));
        }
        let values = y.rows(range.start, range.len());
        let mean = values.mean();
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
        let s = if std > 0.0 {
            level * std
        } else {
            floored.push(k);
            level * 1e-6 * mean.abs() + 1e-12
        };
        for i in range.clone() {
            sigma[i] = s;
        }
    }
    if let Some(i) = sigma.iter().position(|v| v.is_nan()) {
        return Err(Error::invalid(format!("state component {i} belongs to no series")));
    }
    Ok((sigma, floored))
}

/// Adds white Gaussian noise to `y_t`. Each component's standard deviation is
/// `level` times the standard deviation over time of the series containing
/// it. The underlying standard normal draws depend only on `seed`, so
/// different levels share them.
pub fn inject_noise(
    y_t: &DVector<f64>,
    series: &[Range<usize>],
    level: f64,
    seed: u64,
) -> Result<NoisyObservation> {
    if level == 0.0 {
        return Err(Error::NotPositiveDefinite {
            name: "observation covariance".into(),
            min_eigenvalue: 0.0,
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("noise level {level} outside (0, 1)")));
    }
    let (sigma, floored) = series_sigma(y_t, series, level)?;
    let mut rng = stream(seed, Substream::Noise);
    let y_o = DVector::from_fn(y_t.len(), |i, _| {
        let z: f64 = rng.sample(StandardNormal);
        y_t[i] + sigma[i] * z
    });
    Ok(NoisyObservation {
        y_o,
        sigma,
        floored_series: floored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_level_is_rejected_as_singular_covariance() {
        let err = inject_noise(&DVector::from_element(4, 1.0), &[0..4], 0.0, 1).unwrap_err();
        assert!(err.to_string().contains("observation covariance must be positive definite"));
    }

    #[test]
    fn constant_series_is_floored_and_flagged() {
        let y = DVector::from_vec(vec![2.0, 2.0, 1.0, 3.0]);
        let obs = inject_noise(&y, &[0..2, 2..4], 0.1, 1).unwrap();
        assert_eq!(obs.floored_series, vec![0]);
        assert!((obs.sigma[0] - (0.1 * 1e-6 * 2.0 + 1e-12)).abs() < 1e-20);
        assert!((obs.sigma[2] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn empirical_spread_matches_sigma() {
        let y = DVector::from_vec(vec![0.0, 1.0, 2.0, 3.0]);
        let ranges = [0..4];
        let sigma = inject_noise(&y, &ranges, 0.2, 0).unwrap().sigma[1];
        let draws = 10_000;
        let mut ss = 0.0;
        for seed in 0..draws {
            let obs = inject_noise(&y, &ranges, 0.2, seed).unwrap();
            ss += (obs.y_o[1] - y[1]).powi(2);
        }
        let est = (ss / draws as f64).sqrt();
        assert!((est / sigma - 1.0).abs() < 0.03, "{est} vs {sigma}");
    }
}
