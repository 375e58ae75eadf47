use nalgebra::{DMatrix, DVector};

use crate::linalg::SpdFactor;
use crate::{Error, Result};

/// Background and observation description of a 3DVAR calibration.
///
/// The covariances actually used are `α_B·B` and `α_R·R`; their Cholesky
/// factors are computed once at construction.
#[derive(Debug, Clone)]
pub struct AssimilationProblem {
    x_b: DVector<f64>,
    b: DMatrix<f64>,
    y_o: DVector<f64>,
    r: DMatrix<f64>,
    bounds: Vec<(f64, f64)>,
    alpha_b: f64,
    alpha_r: f64,
    b_factor: SpdFactor,
    r_factor: SpdFactor,
}

fn check_alpha(name: &str, alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("{name} must be positive, got {alpha}")));
    }
    Ok(())
}

impl AssimilationProblem {
    pub fn new(
        x_b: DVector<f64>,
        b: DMatrix<f64>,
        y_o: DVector<f64>,
        r: DMatrix<f64>,
        bounds: Vec<(f64, f64)>,
    ) -> Result<Self> {
        Self::with_scaling(x_b, b, y_o, r, bounds, 1.0, 1.0)
    }

    pub fn with_scaling(
        x_b: DVector<f64>,
        b: DMatrix<f64>,
        y_o: DVector<f64>,
        r: DMatrix<f64>,
        bounds: Vec<(f64, f64)>,
        alpha_b: f64,
        alpha_r: f64,
    ) -> Result<Self> {
        check_alpha("alpha_B", alpha_b)?;
        check_alpha("alpha_R", alpha_r)?;
        if bounds.len() != x_b.len() {
            return Err(Error::dim(format!(
                "{} bounds for {} parameters",
                bounds.len(),
                x_b.len()
            )));
        }
        for (i, (&v, &(lo, hi))) in x_b.iter().zip(&bounds).enumerate() {
            if !(lo < hi) {
                return Err(Error::invalid(format!("empty bound interval for parameter {i}")));
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
        if b.nrows() != x_b.len() {
            return Err(Error::dim(format!(
                "background covariance is {}×{}, parameter dimension is {}",
                b.nrows(),
                b.ncols(),
                x_b.len()
            )));
        }
        if r.nrows() != y_o.len() {
            return Err(Error::dim(format!(
                "observation covariance is {}×{}, observation dimension is {}",
                r.nrows(),
                r.ncols(),
                y_o.len()
            )));
        }
        if y_o.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observation contains non-finite values"));
        }
        let b_factor = SpdFactor::new("background covariance", &(&b * alpha_b))?;
        let r_factor = SpdFactor::new("observation covariance", &(&r * alpha_r))?;
        Ok(AssimilationProblem {
            x_b,
            b,
            y_o,
            r,
            bounds,
            alpha_b,
            alpha_r,
            b_factor,
            r_factor,
        })
    }

    /// Copy of the problem using `α_B·B` and `α_R·R`.
    pub fn scale_covariances(&self, alpha_b: f64, alpha_r: f64) -> Result<Self> {
        Self::with_scaling(
            self.x_b.clone(),
            self.b.clone(),
            self.y_o.clone(),
            self.r.clone(),
            self.bounds.clone(),
            alpha_b,
            alpha_r,
        )
    }

    /// Copy of the problem with a different (unscaled) observation covariance.
    pub fn with_observation_covariance(&self, r: DMatrix<f64>) -> Result<Self> {
        Self::with_scaling(
            self.x_b.clone(),
            self.b.clone(),
            self.y_o.clone(),
            r,
            self.bounds.clone(),
            self.alpha_b,
            self.alpha_r,
        )
    }

    pub fn x_b(&self) -> &DVector<f64> {
        &self.x_b
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn y_o(&self) -> &DVector<f64> {
        &self.y_o
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn alpha_b(&self) -> f64 {
        self.alpha_b
    }

    pub fn alpha_r(&self) -> f64 {
        self.alpha_r
    }

    pub fn param_dim(&self) -> usize {
        self.x_b.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.y_o.len()
    }

    /// Factor of `α_B·B`.
    pub fn background_factor(&self) -> &SpdFactor {
        &self.b_factor
    }

    /// Factor of `α_R·R`.
    pub fn observation_factor(&self) -> &SpdFactor {
        &self.r_factor
    }

    pub fn in_bounds(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .zip(&self.bounds)
            .all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }

    /// `½‖x − x_b‖²_{B⁻¹} + ½‖y − y_o‖²_{R⁻¹}` for a given model output `y`.
    pub fn cost_with_output(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        if x.len() != self.param_dim() || y.len() != self.obs_dim() {
            return Err(Error::dim(format!(
                "cost evaluated with {} parameters and {} outputs, expected {} and {}",
                x.len(),
                y.len(),
                self.param_dim(),
                self.obs_dim()
            )));
        }
        Ok(0.5 * self.b_factor.mahalanobis_sq(&(x - &self.x_b))
            + 0.5 * self.r_factor.mahalanobis_sq(&(y - &self.y_o)))
    }
}

/// 3DVAR cost `J(x)` for a forward model `G`.
pub fn cost_3dvar<G>(x: &DVector<f64>, model: G, prob: &AssimilationProblem) -> Result<f64>
where
    G: Fn(&[f64]) -> Result<DVector<f64>>,
{
    for (i, (&v, &(lo, hi))) in x.iter().zip(prob.bounds()).enumerate() {
        if !(v >= lo && v <= hi) {
            return Err(Error::OutOfBounds {
                index: i,
                value: v,
                lo,
                hi,
            });
        }
    }
    let y = model(x.as_slice())?;
    prob.cost_with_output(x, &y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Substream};
    use rand::Rng;

    fn identity_problem(x_b: Vec<f64>, y_o: Vec<f64>) -> AssimilationProblem {
        let (m, k) = (x_b.len(), y_o.len());
        AssimilationProblem::new(
            DVector::from_vec(x_b),
            DMatrix::identity(m, m),
            DVector::from_vec(y_o),
            DMatrix::identity(k, k),
            vec![(-5.0, 5.0); m],
        )
        .unwrap()
    }

    #[test]
    fn zero_at_background_and_observation() {
        let p = identity_problem(vec![0.5, -0.5], vec![1.0, 2.0, 3.0]);
        let j = cost_3dvar(&DVector::from_vec(vec![0.5, -0.5]), |_| Ok(DVector::from_vec(vec![1.0, 2.0, 3.0])), &p)
            .unwrap();
        assert_eq!(j, 0.0);
    }

    #[test]
    fn unit_background_deviation() {
        let p = identity_problem(vec![0.0, 0.0], vec![1.0]);
        let j = cost_3dvar(&DVector::from_vec(vec![1.0, 0.0]), |_| Ok(DVector::from_vec(vec![1.0])), &p).unwrap();
        assert!((j - 0.5).abs() < 1e-15);
    }

    #[test]
    fn matches_explicit_inverse() {
        let mut rng = stream(8, Substream::Test);
        let mut rand_spd = |n: usize| {
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            &a * a.transpose() + DMatrix::identity(n, n) * 0.5
        };
        let b = rand_spd(3);
        let r = rand_spd(5);
        let x_b = DVector::from_vec(vec![0.1, 0.2, -0.3]);
        let y_o = DVector::from_vec(vec![1.0, -1.0, 0.5, 0.0, 2.0]);
        let p = AssimilationProblem::new(x_b.clone(), b.clone(), y_o.clone(), r.clone(), vec![(-1.0, 1.0); 3])
            .unwrap();
        let x = DVector::from_vec(vec![0.7, -0.4, 0.9]);
        let y = DVector::from_vec(vec![0.3, 0.1, -0.2, 1.5, 0.4]);
        let j = cost_3dvar(&x, |_| Ok(y.clone()), &p).unwrap();
        let dx = &x - &x_b;
        let dy = &y - &y_o;
        let direct = 0.5 * (dx.transpose() * b.try_inverse().unwrap() * &dx)[0]
            + 0.5 * (dy.transpose() * r.try_inverse().unwrap() * &dy)[0];
        assert!((j - direct).abs() < 1e-10 * direct);
    }

    #[test]
    fn indefinite_covariance_reports_eigenvalue() {
        let err = AssimilationProblem::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]),
            DVector::zeros(1),
            DMatrix::identity(1, 1),
            vec![(-1.0, 1.0); 2],
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("background covariance must be positive definite"), "{msg}");
        assert!(msg.contains("-2"), "{msg}");
    }

    #[test]
    fn non_positive_alpha_is_rejected() {
        let p = identity_problem(vec![0.0], vec![0.0]);
        assert!(p.scale_covariances(0.0, 1.0).is_err());
        let same = p.scale_covariances(1.0, 1.0).unwrap();
        assert_eq!(same.r(), p.r());
        assert_eq!(same.alpha_b(), 1.0);
    }
}
