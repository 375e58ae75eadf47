//! Quasi-steady point emulator of a tidal coastal model.
//!
//! Free-surface elevation and the two depth-averaged velocity components are
//! synthesized at a few stations from a small harmonic table. Boundary
//! coefficients scale the harmonic sums and a Strickler-type friction term
//! damps the velocities:
//!
//! ```text
//! η̃_p(t) = Σ A_i cos(2πt/T_i − φ_i − θ_p)        η_p = CTL·η̃_p + MTL
//! h_p(t) = max(MTL + D_p + CTL·η̃_p, h_min)
//! s_p(t) = CTV·Σ V_i cos(2πt/T_i − ψ_i − θ_p)
//! c_f    = g·T_d / (K2²·h^{4/3})
//! u_p    = s_p / (1 + c_f|s_p|)                  v_p = r·s⊥_p / (1 + c_f|s⊥_p|)
//! ```
//!
//! States are flattened as `[u(P1, t_1..t_k), …, u(P5, ·), v(…), η(…)]`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::rng::{stream, Substream};
use crate::{Error, Result};

pub const TOYMODEL_SCHEMA_VERSION: u32 = 1;
const DEFAULT_CONFIG: &str = include_str!("../config/toymodel_v1.json");

pub const N_PARAMS: usize = 4;
pub const PARAM_NAMES: [&str; N_PARAMS] = ["K2", "MTL", "CTL", "CTV"];

/// Calibration parameters, in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TidalParams {
    /// Strickler coefficient (m^{1/3}/s).
    pub k2: f64,
    /// Mean tidal level (m).
    pub mtl: f64,
    /// Coefficient of tidal level.
    pub ctl: f64,
    /// Coefficient of tidal velocity.
    pub ctv: f64,
}

impl TidalParams {
    pub fn to_array(self) -> [f64; N_PARAMS] {
        [self.k2, self.mtl, self.ctl, self.ctv]
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.len() != N_PARAMS {
            return Err(Error::dim(format!(
                "{} parameter values, expected {N_PARAMS}",
                x.len()
            )));
        }
        Ok(TidalParams {
            k2: x[0],
            mtl: x[1],
            ctl: x[2],
            ctv: x[3],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variable {
    U,
    V,
    Eta,
}

impl Variable {
    pub const ALL: [Variable; 3] = [Variable::U, Variable::V, Variable::Eta];

    pub fn name(self) -> &'static str {
        match self {
            Variable::U => "u",
            Variable::V => "v",
            Variable::Eta => "eta",
        }
    }

    pub fn position(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constituent {
    pub name: String,
    pub period_h: f64,
    pub amplitude_m: f64,
    pub phase_rad: f64,
    pub velocity_ms: f64,
    pub velocity_phase_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Station {
    pub id: String,
    pub depth_offset_m: f64,
    pub phase_lag_rad: f64,
}

/// Bounds and Gaussian prior moments of one calibration parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub mean: f64,
    pub std: f64,
}

/// Frozen constants of the emulator together with its station/time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyModel {
    pub schema_version: u32,
    pub kind: String,
    pub gravity: f64,
    pub damping_time_s: f64,
    pub min_depth_m: f64,
    pub cross_shore_ratio: f64,
    pub cross_phase_shift_rad: f64,
    pub time_step_h: f64,
    pub n_times: usize,
    pub constituents: Vec<Constituent>,
    pub stations: Vec<Station>,
    pub parameters: Vec<ParameterSpec>,
}

impl Default for ToyModel {
    fn default() -> Self {
        ToyModel::from_json(DEFAULT_CONFIG).expect("shipped toy model config is valid")
    }
}

impl ToyModel {
    /// Raw text of the shipped configuration.
    pub fn default_json() -> &'static str {
        DEFAULT_CONFIG
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Parse("toy model config lacks schema_version".into()))?;
        if found != TOYMODEL_SCHEMA_VERSION as u64 {
            return Err(Error::SchemaVersion {
                kind: "toymodel".into(),
                found: found as u32,
                expected: TOYMODEL_SCHEMA_VERSION,
            });
        }
        let model: ToyModel = serde_json::from_value(value)?;
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != "toymodel" {
            return Err(Error::invalid(format!(
                "expected a toymodel document, found kind {:?}",
                self.kind
            )));
        }
        if self.n_times == 0 || !(self.time_step_h > 0.0) {
            return Err(Error::invalid("time grid must be non-empty and increasing"));
        }
        if self.stations.is_empty() || self.constituents.is_empty() {
            return Err(Error::invalid("toy model needs stations and constituents"));
        }
        if let Some(s) = self.stations.iter().find(|s| !(s.depth_offset_m > 0.0)) {
            return Err(Error::invalid(format!(
                "station {} has non-positive depth offset",
                s.id
            )));
        }
        if self.constituents.iter().any(|c| !(c.period_h > 0.0)) {
            return Err(Error::invalid("constituent periods must be positive"));
        }
        if self.parameters.len() != N_PARAMS {
            return Err(Error::invalid(format!(
                "toy model declares {} parameters, expected {N_PARAMS}",
                self.parameters.len()
            )));
        }
        for (spec, name) in self.parameters.iter().zip(PARAM_NAMES) {
            if spec.name != name {
                return Err(Error::invalid(format!(
                    "parameter {} out of order, expected {name}",
                    spec.name
                )));
            }
            if !(spec.lower < spec.upper && spec.std > 0.0) {
                return Err(Error::invalid(format!("invalid bounds for {name}")));
            }
        }
        if !(self.min_depth_m > 0.0 && self.gravity > 0.0 && self.damping_time_s > 0.0) {
            return Err(Error::invalid("physical constants must be positive"));
        }
        Ok(())
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn state_dim(&self) -> usize {
        Variable::ALL.len() * self.n_stations() * self.n_times
    }

    /// Record times in hours.
    pub fn times(&self) -> Vec<f64> {
        (0..self.n_times).map(|j| j as f64 * self.time_step_h).collect()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.parameters.iter().map(|p| (p.lower, p.upper)).collect()
    }

    pub fn prior_mean(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.mean).collect()
    }

    pub fn prior_std(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.std).collect()
    }

    pub fn flat_index(&self, var: Variable, station: usize, time: usize) -> usize {
        debug_assert!(station < self.n_stations() && time < self.n_times);
        (var.position() * self.n_stations() + station) * self.n_times + time
    }

    pub fn unflatten(&self, index: usize) -> (Variable, usize, usize) {
        let time = index % self.n_times;
        let rest = index / self.n_times;
        let station = rest % self.n_stations();
        (Variable::ALL[rest / self.n_stations()], station, time)
    }

    /// Flat index range of one `(variable, station)` time series.
    pub fn series(&self, var: Variable, station: usize) -> std::ops::Range<usize> {
        let start = self.flat_index(var, station, 0);
        start..start + self.n_times
    }

    pub fn row_labels(&self) -> Vec<String> {
        (0..self.state_dim())
            .map(|i| {
                let (var, s, t) = self.unflatten(i);
                format!("{}_{}_t{:02}", var.name(), self.stations[s].id, t)
            })
            .collect()
    }

    pub fn check_params(&self, x: &[f64]) -> Result<()> {
        if x.len() != N_PARAMS {
            return Err(Error::dim(format!(
                "{} parameter values, expected {N_PARAMS}",
                x.len()
            )));
        }
        for (i, (&v, spec)) in x.iter().zip(&self.parameters).enumerate() {
            let slack = 1e-9 * (spec.upper - spec.lower);
            if !(v >= spec.lower - slack && v <= spec.upper + slack) {
                return Err(Error::OutOfBounds {
                    index: i,
                    value: v,
                    lo: spec.lower,
                    hi: spec.upper,
                });
            }
        }
        Ok(())
    }

    pub fn simulate(&self, p: &TidalParams) -> Result<DVector<f64>> {
        self.check_params(&p.to_array())?;
        Ok(self.simulate_unchecked(p))
    }

    pub fn simulate_slice(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.simulate(&TidalParams::from_slice(x)?)
    }

    /// Evaluates the emulator without the bounds check; used for probes
    /// outside the calibration box.
    pub fn simulate_unchecked(&self, p: &TidalParams) -> DVector<f64> {
        let k = self.n_times;
        let mut y = DVector::zeros(self.state_dim());
        let two_pi = std::f64::consts::TAU;
        let shift = self.cross_phase_shift_rad;
        let friction_scale = self.gravity * self.damping_time_s / (p.k2 * p.k2);
        for (s, station) in self.stations.iter().enumerate() {
            for (j, t) in self.times().into_iter().enumerate() {
                let mut eta_tilde = 0.0;
                let mut along = 0.0;
                let mut cross = 0.0;
                for c in &self.constituents {
                    let omega_t = two_pi * t / c.period_h - station.phase_lag_rad;
                    eta_tilde += c.amplitude_m * (omega_t - c.phase_rad).cos();
                    along += c.velocity_ms * (omega_t - c.velocity_phase_rad).cos();
                    cross += c.velocity_ms * (omega_t - c.velocity_phase_rad - shift).cos();
                }
                let along = p.ctv * along;
                let cross = p.ctv * cross;
                let depth = (p.mtl + station.depth_offset_m + p.ctl * eta_tilde).max(self.min_depth_m);
                let cf = friction_scale / depth.powf(4.0 / 3.0);
                y[self.flat_index(Variable::U, s, j)] = along / (1.0 + cf * along.abs());
                y[self.flat_index(Variable::V, s, j)] =
                    self.cross_shore_ratio * cross / (1.0 + cf * cross.abs());
                y[self.flat_index(Variable::Eta, s, j)] = p.ctl * eta_tilde + p.mtl;
            }
        }
        debug_assert_eq!(y.len(), 3 * self.n_stations() * k);
        y
    }

    /// Runs every row of `params` (n × 4) and returns the states as columns.
    pub fn simulate_ensemble(&self, params: &DMatrix<f64>, exec: Execution) -> Result<DMatrix<f64>> {
        if params.ncols() != N_PARAMS {
            return Err(Error::dim(format!(
                "parameter matrix has {} columns, expected {N_PARAMS}",
                params.ncols()
            )));
        }
        let runs = exec.map_range(params.nrows(), |j| {
            let row: Vec<f64> = params.row(j).iter().copied().collect();
            self.simulate_slice(&row)
        });
        let cols = runs.into_iter().collect::<Result<Vec<_>>>()?;
        if cols.is_empty() {
            return Ok(DMatrix::zeros(self.state_dim(), 0));
        }
        Ok(DMatrix::from_columns(&cols))
    }
}

/// Draws `n` independent uniform samples inside `bounds` (one row per sample).
///
/// Rows are drawn in order from a single stream, so the first `n₁` rows of a
/// larger draw with the same seed are identical.
pub fn sample_parameters(bounds: &[(f64, f64)], n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    for (i, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!("invalid bounds [{lo}, {hi}] for input {i}")));
        }
    }
    let mut rng = stream(seed, Substream::Sampling);
    let mut out = DMatrix::zeros(n, bounds.len());
    for j in 0..n {
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            out[(j, i)] = rng.random_range(lo..=hi);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central() -> TidalParams {
        TidalParams {
            k2: 55.84,
            mtl: 5.0,
            ctl: 1.05,
            ctv: 1.9,
        }
    }

    #[test]
    fn shipped_grid_shape() {
        let m = ToyModel::default();
        assert_eq!(m.n_times(), 38);
        assert_eq!(m.state_dim(), 570);
        let t = m.times();
        assert!(t.windows(2).all(|w| w[1] > w[0]));
        assert!((t[37] - 37.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_ctl_freezes_elevation_at_mtl() {
        let m = ToyModel::default();
        let y = m.simulate_unchecked(&TidalParams { ctl: 0.0, ..central() });
        for s in 0..5 {
            for i in m.series(Variable::Eta, s) {
                assert_eq!(y[i], 5.0);
            }
        }
    }

    #[test]
    fn zero_ctv_stops_currents() {
        let m = ToyModel::default();
        let y = m.simulate_unchecked(&TidalParams { ctv: 0.0, ..central() });
        for s in 0..5 {
            for var in [Variable::U, Variable::V] {
                assert!(m.series(var, s).all(|i| y[i] == 0.0));
            }
        }
    }

    #[test]
    fn weaker_friction_gives_stronger_currents() {
        let m = ToyModel::default();
        let lo = m.simulate(&TidalParams { k2: 21.02, ..central() }).unwrap();
        let hi = m.simulate(&TidalParams { k2: 90.66, ..central() }).unwrap();
        let max_u = |y: &DVector<f64>| {
            (0..5)
                .flat_map(|s| m.series(Variable::U, s))
                .map(|i| y[i].abs())
                .fold(0.0, f64::max)
        };
        assert!(max_u(&hi) > max_u(&lo));
    }

    #[test]
    fn out_of_bounds_is_rejected() {
        let m = ToyModel::default();
        let err = m.simulate(&TidalParams { ctl: 1.4, ..central() }).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { index: 2, .. }));
    }

    #[test]
    fn index_helpers_round_trip() {
        let m = ToyModel::default();
        for i in 0..m.state_dim() {
            let (v, s, t) = m.unflatten(i);
            assert_eq!(m.flat_index(v, s, t), i);
        }
        assert_eq!(m.flat_index(Variable::V, 0, 0), 190);
        assert_eq!(m.row_labels()[380], "eta_P1_t00");
    }

    #[test]
    fn sampling_is_nested_and_bounded() {
        let m = ToyModel::default();
        let a = sample_parameters(&m.bounds(), 100, 7).unwrap();
        let b = sample_parameters(&m.bounds(), 400, 7).unwrap();
        assert_eq!(a, b.rows(0, 100).into_owned());
        for (i, (lo, hi)) in m.bounds().into_iter().enumerate() {
            assert!(b.column(i).iter().all(|&v| v >= lo && v <= hi));
        }
    }

    #[test]
    fn k2_sample_mean_matches_table_mean() {
        let m = ToyModel::default();
        let x = sample_parameters(&m.bounds(), 1000, 42).unwrap();
        let mean = x.column(0).mean();
        assert!((52.0..=60.0).contains(&mean), "{mean}");
    }

    #[test]
    fn tampered_schema_version_is_rejected() {
        let text = ToyModel::default_json().replace("\"schema_version\": 1", "\"schema_version\": 2");
        let err = ToyModel::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("found 2, expected 1"));
    }

    #[test]
    fn ensemble_matches_single_runs() {
        let m = ToyModel::default();
        let x = sample_parameters(&m.bounds(), 8, 1).unwrap();
        let seq = m.simulate_ensemble(&x, Execution::Sequential).unwrap();
        let par = m.simulate_ensemble(&x, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
        let row: Vec<f64> = x.row(3).iter().copied().collect();
        assert_eq!(seq.column(3).into_owned(), m.simulate_slice(&row).unwrap());
    }
}
