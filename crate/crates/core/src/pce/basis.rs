use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Univariate orthonormal family, matched to the input's marginal law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Legendre polynomials, orthonormal for the uniform law on [-1, 1].
    Legendre,
    /// Probabilists' Hermite polynomials, orthonormal for N(0, 1).
    Hermite,
}

/// Affine map from a physical input to the family's standard variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputTransform {
    /// `[lo, hi] -> [-1, 1]`.
    Uniform { lo: f64, hi: f64 },
    /// `x -> (x - mean) / std`.
    Gaussian { mean: f64, std: f64 },
}

const BOUNDS_RTOL: f64 = 1e-9;

impl InputTransform {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!("invalid bounds [{lo}, {hi}]")));
        }
        Ok(InputTransform::Uniform { lo, hi })
    }

    pub fn family(&self) -> Family {
        match self {
            InputTransform::Uniform { .. } => Family::Legendre,
            InputTransform::Gaussian { .. } => Family::Hermite,
        }
    }

    pub fn to_standard(&self, x: f64) -> f64 {
        match *self {
            InputTransform::Uniform { lo, hi } => ((x - lo) - (hi - x)) / (hi - lo),
            InputTransform::Gaussian { mean, std } => (x - mean) / std,
        }
    }

    pub fn from_standard(&self, t: f64) -> f64 {
        match *self {
            InputTransform::Uniform { lo, hi } => 0.5 * (lo + hi) + 0.5 * (hi - lo) * t,
            InputTransform::Gaussian { mean, std } => mean + std * t,
        }
    }

    /// `dt/dx`.
    pub fn slope(&self) -> f64 {
        match *self {
            InputTransform::Uniform { lo, hi } => 2.0 / (hi - lo),
            InputTransform::Gaussian { std, .. } => 1.0 / std,
        }
    }

    /// Rejects inputs outside the declared support by more than a relative
    /// `1e-9` of its width.
    pub fn check(&self, index: usize, x: f64) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::invalid(format!("input {index} is not finite")));
        }
        if let InputTransform::Uniform { lo, hi } = *self {
            let slack = BOUNDS_RTOL * (hi - lo);
            if x < lo - slack || x > hi + slack {
                return Err(Error::OutOfBounds {
                    index,
                    value: x,
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }
}

/// Values `ξ_0(t) … ξ_p(t)` of the orthonormal family.
pub fn univariate_table(family: Family, p: usize, t: f64) -> Vec<f64> {
    let mut raw = vec![0.0; p + 1];
    raw[0] = 1.0;
    if p >= 1 {
        raw[1] = t;
    }
    match family {
        Family::Legendre => {
            for b in 1..p {
                let bf = b as f64;
                raw[b + 1] = ((2.0 * bf + 1.0) * t * raw[b] - bf * raw[b - 1]) / (bf + 1.0);
            }
            for (b, v) in raw.iter_mut().enumerate() {
                *v *= (2.0 * b as f64 + 1.0).sqrt();
            }
        }
        Family::Hermite => {
            for b in 1..p {
                raw[b + 1] = t * raw[b] - b as f64 * raw[b - 1];
            }
            let mut fact = 1.0;
            for (b, v) in raw.iter_mut().enumerate() {
                if b > 0 {
                    fact *= b as f64;
                }
                *v /= fact.sqrt();
            }
        }
    }
    raw
}

/// Derivatives `ξ'_0(t) … ξ'_p(t)` with respect to the standard variable.
pub fn univariate_derivative_table(family: Family, p: usize, t: f64) -> Vec<f64> {
    match family {
        Family::Legendre => {
            let mut val = vec![0.0; p + 1];
            let mut der = vec![0.0; p + 1];
            val[0] = 1.0;
            if p >= 1 {
                val[1] = t;
                der[1] = 1.0;
            }
            for b in 1..p {
                let bf = b as f64;
                val[b + 1] = ((2.0 * bf + 1.0) * t * val[b] - bf * val[b - 1]) / (bf + 1.0);
                der[b + 1] =
                    ((2.0 * bf + 1.0) * (val[b] + t * der[b]) - bf * der[b - 1]) / (bf + 1.0);
            }
            for (b, v) in der.iter_mut().enumerate() {
                *v *= (2.0 * b as f64 + 1.0).sqrt();
            }
            der
        }
        Family::Hermite => {
            // ξ'_β = √β ξ_{β-1}
            let val = univariate_table(family, p, t);
            (0..=p)
                .map(|b| if b == 0 { 0.0 } else { (b as f64).sqrt() * val[b - 1] })
                .collect()
        }
    }
}

pub fn univariate_eval(family: Family, degree: usize, t: f64) -> f64 {
    univariate_table(family, degree, t)[degree]
}

pub fn univariate_derivative(family: Family, degree: usize, t: f64) -> f64 {
    univariate_derivative_table(family, degree, t)[degree]
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(exponents: Vec<usize>) -> Self {
        MultiIndex(exponents)
    }

    pub fn exponents(&self) -> &[usize] {
        &self.0
    }

    pub fn total_degree(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn is_constant(&self) -> bool {
        self.0.iter().all(|a| *a == 0)
    }
}

/// Every multi-index of total degree at most `p` in graded lexicographic
/// order: by total degree, then by decreasing leading exponent.
pub fn multi_index_set(dim: usize, p: usize) -> Vec<MultiIndex> {
    fn compositions(total: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut Vec<MultiIndex>) {
        if parts == 1 {
            prefix.push(total);
            out.push(MultiIndex(prefix.clone()));
            prefix.pop();
            return;
        }
        for first in (0..=total).rev() {
            prefix.push(first);
            compositions(total - first, parts - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if dim == 0 {
        return out;
    }
    for q in 0..=p {
        compositions(q, dim, &mut Vec::with_capacity(dim), &mut out);
    }
    out
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Per-input tables of `ξ_β(T_i(x_i))` for `β ≤ p`.
pub(crate) fn input_tables(
    x: &[f64],
    transforms: &[InputTransform],
    p: usize,
) -> Result<Vec<Vec<f64>>> {
    if x.len() != transforms.len() {
        return Err(Error::dim(format!(
            "input has {} components, expansion expects {}",
            x.len(),
            transforms.len()
        )));
    }
    x.iter()
        .zip(transforms)
        .enumerate()
        .map(|(i, (&xi, tr))| {
            tr.check(i, xi)?;
            Ok(univariate_table(tr.family(), p, tr.to_standard(xi)))
        })
        .collect()
}

/// Design matrix `Ψ[j, α] = Π_i ξ_{α_i}(T_i(x_{j,i}))` for samples in rows.
pub fn design_matrix(
    samples: &DMatrix<f64>,
    indices: &[MultiIndex],
    transforms: &[InputTransform],
) -> Result<DMatrix<f64>> {
    let p = indices.iter().map(MultiIndex::total_degree).max().unwrap_or(0);
    let mut psi = DMatrix::zeros(samples.nrows(), indices.len());
    let mut x = vec![0.0; samples.ncols()];
    for j in 0..samples.nrows() {
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = samples[(j, i)];
        }
        let tables = input_tables(&x, transforms, p)?;
        for (col, alpha) in indices.iter().enumerate() {
            psi[(j, col)] = alpha
                .exponents()
                .iter()
                .zip(&tables)
                .map(|(&a, tab)| tab[a])
                .product();
        }
    }
    Ok(psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn legendre_reference_values() {
        assert_eq!(univariate_eval(Family::Legendre, 0, 0.37), 1.0);
        assert_relative_eq!(univariate_eval(Family::Legendre, 1, 0.5), 0.866_025_403_784_438_6);
        assert_relative_eq!(univariate_eval(Family::Legendre, 2, 1.0), 5f64.sqrt(), epsilon = 1e-14);
        // P_3(t) = (5t³ - 3t)/2
        let t = 0.3;
        assert_relative_eq!(
            univariate_eval(Family::Legendre, 3, t),
            7f64.sqrt() * 0.5 * (5.0 * t * t * t - 3.0 * t),
            epsilon = 1e-14
        );
    }

    #[test]
    fn hermite_reference_values() {
        let t = 0.7;
        // He_2 = t² - 1, He_3 = t³ - 3t
        assert_relative_eq!(univariate_eval(Family::Hermite, 2, t), (t * t - 1.0) / 2f64.sqrt());
        assert_relative_eq!(
            univariate_eval(Family::Hermite, 3, t),
            (t * t * t - 3.0 * t) / 6f64.sqrt(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn derivatives_match_finite_differences() {
        assert_eq!(univariate_derivative(Family::Legendre, 0, 0.4), 0.0);
        for t in [-0.9, -0.2, 0.0, 0.55] {
            assert_relative_eq!(univariate_derivative(Family::Legendre, 1, t), 3f64.sqrt());
        }
        for family in [Family::Legendre, Family::Hermite] {
            for degree in 0..8 {
                let t = 0.2;
                let h = 1e-6;
                let fd = (univariate_eval(family, degree, t + h)
                    - univariate_eval(family, degree, t - h))
                    / (2.0 * h);
                let an = univariate_derivative(family, degree, t);
                assert!(
                    (fd - an).abs() <= 1e-7 * an.abs().max(1.0),
                    "{family:?} {degree}: {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn multi_index_counts_and_order() {
        assert_eq!(multi_index_set(1, 3).len(), 4);
        assert_eq!(multi_index_set(4, 2).len(), 15);
        assert_eq!(multi_index_set(2, 0), vec![MultiIndex::new(vec![0, 0])]);
        let set = multi_index_set(2, 2);
        let got: Vec<Vec<usize>> = set.iter().map(|a| a.exponents().to_vec()).collect();
        assert_eq!(
            got,
            vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]
        );
        for (m, p) in [(3, 4), (4, 6), (5, 3)] {
            assert_eq!(multi_index_set(m, p).len(), binomial(m + p, p));
        }
    }

    #[test]
    fn design_matrix_endpoint_row() {
        let tr = [InputTransform::uniform(-1.0, 1.0).unwrap()];
        let x = DMatrix::from_row_slice(2, 1, &[1.0, -0.3]);
        let psi = design_matrix(&x, &multi_index_set(1, 2), &tr).unwrap();
        assert_relative_eq!(psi[(0, 0)], 1.0);
        assert_relative_eq!(psi[(0, 1)], 3f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(psi[(0, 2)], 5f64.sqrt(), epsilon = 1e-14);
        assert_eq!(psi[(1, 0)], 1.0);
        let bad = DMatrix::from_row_slice(1, 1, &[1.0 + 1e-6]);
        assert!(matches!(
            design_matrix(&bad, &multi_index_set(1, 2), &tr),
            Err(Error::OutOfBounds { .. })
        ));
        let edge = DMatrix::from_row_slice(1, 1, &[1.0 + 1e-12]);
        assert!(design_matrix(&edge, &multi_index_set(1, 2), &tr).is_ok());
    }

    #[test]
    fn transform_maps_endpoints_exactly() {
        let tr = InputTransform::uniform(21.02, 90.66).unwrap();
        assert_eq!(tr.to_standard(21.02), -1.0);
        assert_eq!(tr.to_standard(90.66), 1.0);
        assert!(InputTransform::uniform(2.0, 1.0).is_err());
    }
}
