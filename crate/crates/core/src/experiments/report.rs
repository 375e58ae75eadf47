use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::assimilate::SolverKind;
use crate::io::provenance_line;
use crate::surrogate::CovarianceKind;
use crate::toymodel::Variable;
use crate::{Error, Result};

/// One assimilation of a sweep. Metrics that do not apply to the experiment
/// (truth distances in measurement mode, distance to classical 3DVAR in twin
/// mode) are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub experiment: String,
    pub surrogate: SolverKind,
    pub covariance: Option<CovarianceKind>,
    pub truncation: String,
    pub d: usize,
    pub n: usize,
    pub noise: f64,
    pub alpha_b: f64,
    pub alpha_r: f64,
    pub replicate: Option<usize>,
    pub ok: bool,
    /// Standardized global RMSE between the truth state and the model re-run
    /// at the analysis parameters.
    pub rmse_truth: f64,
    /// Same against the state predicted by the solver itself.
    pub rmse_truth_surrogate: f64,
    pub relative_rmse_truth: f64,
    pub rmse_background_truth: f64,
    pub rmse_obs: f64,
    pub rmse_to_classical: f64,
    /// Per variable (u, v, eta), against the truth in twin mode and against
    /// the observation otherwise.
    pub rmse_by_variable: Vec<f64>,
    pub rmse_by_station: Vec<f64>,
    pub x_a: Vec<f64>,
    pub x_a_std: Vec<f64>,
    /// Largest absolute standardized parameter error, when the truth is known.
    pub param_error: f64,
    pub cost: f64,
    pub iterations: usize,
    pub model_evaluations: usize,
    /// Forward-model runs charged to the analysis: the ensemble size for
    /// surrogate solvers plus any runs made by the solver.
    pub forward_calls: usize,
    pub converged: bool,
    pub reason: String,
}

impl ReportRow {
    pub(crate) fn blank(experiment: &str, surrogate: SolverKind, m_x: usize, stations: usize) -> Self {
        ReportRow {
            experiment: experiment.to_string(),
            surrogate,
            covariance: None,
            truncation: String::new(),
            d: 0,
            n: 0,
            noise: f64::NAN,
            alpha_b: 1.0,
            alpha_r: 1.0,
            replicate: None,
            ok: false,
            rmse_truth: f64::NAN,
            rmse_truth_surrogate: f64::NAN,
            relative_rmse_truth: f64::NAN,
            rmse_background_truth: f64::NAN,
            rmse_obs: f64::NAN,
            rmse_to_classical: f64::NAN,
            rmse_by_variable: vec![f64::NAN; Variable::ALL.len()],
            rmse_by_station: vec![f64::NAN; stations],
            x_a: vec![f64::NAN; m_x],
            x_a_std: vec![f64::NAN; m_x],
            param_error: f64::NAN,
            cost: f64::NAN,
            iterations: 0,
            model_evaluations: 0,
            forward_calls: 0,
            converged: false,
            reason: String::new(),
        }
    }

    pub(crate) fn fail(mut self, err: &Error) -> Self {
        self.ok = false;
        self.converged = false;
        self.reason = err.to_string();
        self
    }

    pub fn covariance_name(&self) -> &'static str {
        self.covariance.map(|c| c.name()).unwrap_or("")
    }
}

/// Rows of one sweep plus what is needed to label its outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub config_hash: String,
    pub param_names: Vec<String>,
    pub station_ids: Vec<String>,
    pub rows: Vec<ReportRow>,
    /// Wall time of each row in seconds, kept out of the report CSV so that
    /// reruns give identical files.
    pub wall_seconds: Vec<f64>,
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

impl ExperimentReport {
    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| !r.ok).count()
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = [
            "experiment",
            "surrogate",
            "covariance",
            "truncation",
            "d",
            "n",
            "noise",
            "alpha_b",
            "alpha_r",
            "replicate",
            "status",
            "rmse_truth",
            "rmse_truth_surrogate",
            "relative_rmse_truth",
            "rmse_background_truth",
            "rmse_obs",
            "rmse_to_classical",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        h.extend(Variable::ALL.iter().map(|v| format!("rmse_{}", v.name())));
        h.extend(self.station_ids.iter().map(|s| format!("rmse_{s}")));
        h.extend(self.param_names.iter().map(|p| format!("x_a_{p}")));
        h.extend(self.param_names.iter().map(|p| format!("x_a_std_{p}")));
        h.extend(
            [
                "param_error",
                "cost",
                "iterations",
                "model_evaluations",
                "forward_calls",
                "converged",
                "reason",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        h
    }

    fn record(&self, r: &ReportRow) -> Vec<String> {
        let mut v = vec![
            r.experiment.clone(),
            r.surrogate.name().to_string(),
            r.covariance_name().to_string(),
            r.truncation.clone(),
            r.d.to_string(),
            r.n.to_string(),
            num(r.noise),
            num(r.alpha_b),
            num(r.alpha_r),
            r.replicate.map(|k| k.to_string()).unwrap_or_default(),
            if r.ok { "ok" } else { "error" }.to_string(),
            num(r.rmse_truth),
            num(r.rmse_truth_surrogate),
            num(r.relative_rmse_truth),
            num(r.rmse_background_truth),
            num(r.rmse_obs),
            num(r.rmse_to_classical),
        ];
        v.extend(r.rmse_by_variable.iter().map(|&x| num(x)));
        v.extend(r.rmse_by_station.iter().map(|&x| num(x)));
        v.extend(r.x_a.iter().map(|&x| num(x)));
        v.extend(r.x_a_std.iter().map(|&x| num(x)));
        v.extend([
            num(r.param_error),
            num(r.cost),
            r.iterations.to_string(),
            r.model_evaluations.to_string(),
            r.forward_calls.to_string(),
            r.converged.to_string(),
            r.reason.clone(),
        ]);
        v
    }

    fn write_table<W: Write>(&self, mut out: W, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        writeln!(out, "{}", provenance_line(&self.config_hash, self.seed))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per cell with a fixed header, preceded by the provenance line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let rows: Vec<Vec<String>> = self.rows.iter().map(|r| self.record(r)).collect();
        self.write_table(out, &self.header(), &rows)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn write_timing_csv<W: Write>(&self, out: W) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .wall_seconds
            .iter()
            .enumerate()
            .map(|(i, &t)| vec![i.to_string(), self.experiment.clone(), format!("{t:.6}")])
            .collect();
        let header: Vec<String> = ["row", "experiment", "wall_seconds"].iter().map(|s| s.to_string()).collect();
        self.write_table(out, &header, &rows)
    }

    /// Long-format tables for plotting, keyed by file stem.
    pub fn plot_tables(&self) -> Vec<(String, Vec<String>, Vec<Vec<String>>)> {
        let ok: Vec<&ReportRow> = self.rows.iter().filter(|r| r.ok).collect();
        let strings = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let melt = |key: Vec<String>, metrics: &[(&str, f64)]| -> Vec<Vec<String>> {
            metrics
                .iter()
                .map(|(m, v)| {
                    let mut row = key.clone();
                    row.push(m.to_string());
                    row.push(num(*v));
                    row
                })
                .collect()
        };
        let sweep_key = |r: &ReportRow| {
            vec![
                r.surrogate.name().to_string(),
                r.covariance_name().to_string(),
                r.truncation.clone(),
                r.d.to_string(),
                r.n.to_string(),
                num(r.noise),
            ]
        };
        let sweep_header = strings(&["surrogate", "covariance", "truncation", "d", "n", "noise", "metric", "value"]);
        match self.experiment.as_str() {
            "twin" => {
                let metrics = |r: &ReportRow| {
                    [
                        ("rmse_truth", r.rmse_truth),
                        ("relative_rmse_truth", r.relative_rmse_truth),
                        ("rmse_obs", r.rmse_obs),
                    ]
                };
                let noise: Vec<Vec<String>> =
                    ok.iter().flat_map(|r| melt(sweep_key(r), &metrics(r))).collect();
                let modes: Vec<Vec<String>> = ok
                    .iter()
                    .filter(|r| r.truncation.starts_with("modes="))
                    .flat_map(|r| melt(sweep_key(r), &metrics(r)))
                    .collect();
                vec![
                    ("noise_sweep".into(), sweep_header.clone(), noise),
                    ("mode_sweep".into(), sweep_header, modes),
                ]
            }
            "covgrid" => {
                let rows = ok
                    .iter()
                    .flat_map(|r| {
                        melt(
                            vec![num(r.alpha_b), num(r.alpha_r)],
                            &[("rmse_truth", r.rmse_truth), ("rmse_obs", r.rmse_obs)],
                        )
                    })
                    .collect();
                vec![(
                    "covariance_grid".into(),
                    strings(&["alpha_b", "alpha_r", "metric", "value"]),
                    rows,
                )]
            }
            "bootstrap" => {
                let rows = ok
                    .iter()
                    .flat_map(|r| {
                        melt(
                            vec![
                                r.surrogate.name().to_string(),
                                r.truncation.clone(),
                                r.d.to_string(),
                                r.replicate.map(|k| k.to_string()).unwrap_or_default(),
                            ],
                            &[("rmse_truth", r.rmse_truth), ("rmse_obs", r.rmse_obs)],
                        )
                    })
                    .collect();
                vec![(
                    "bootstrap_box".into(),
                    strings(&["surrogate", "truncation", "d", "replicate", "metric", "value"]),
                    rows,
                )]
            }
            _ => {
                let rows = ok
                    .iter()
                    .flat_map(|r| {
                        melt(
                            sweep_key(r),
                            &[("rmse_to_classical", r.rmse_to_classical), ("rmse_obs", r.rmse_obs)],
                        )
                    })
                    .collect();
                vec![("measure_convergence".into(), sweep_header, rows)]
            }
        }
    }

    /// Min/mean/max of the headline metric per (surrogate, covariance,
    /// truncation) group, with failure counts.
    pub fn summary(&self) -> Value {
        let headline = |r: &ReportRow| {
            if self.experiment == "measure" {
                r.rmse_to_classical
            } else {
                r.rmse_truth
            }
        };
        let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.ok) {
            let v = headline(r);
            if v.is_finite() {
                groups
                    .entry((r.surrogate.name().into(), r.covariance_name().into(), r.truncation.clone()))
                    .or_default()
                    .push(v);
            }
        }
        let stats: Vec<Value> = groups
            .into_iter()
            .map(|((s, c, t), v)| {
                let min = v.iter().copied().fold(f64::INFINITY, f64::min);
                let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                json!({
                    "surrogate": s, "covariance": c, "truncation": t,
                    "count": v.len(), "min": min, "mean": mean, "max": max,
                })
            })
            .collect();
        json!({
            "experiment": self.experiment,
            "version": crate::VERSION,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "cells": self.rows.len(),
            "failed": self.failed(),
            "metric": if self.experiment == "measure" { "rmse_to_classical" } else { "rmse_truth" },
            "groups": stats,
        })
    }

    /// Writes `<experiment>_report.csv`, the plot tables, `timing.csv` and
    /// `summary.json` into `dir`, returning the paths written.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let path = dir.join(format!("{}_report.csv", self.experiment));
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
        written.push(path);
        for (stem, header, rows) in self.plot_tables() {
            let path = dir.join(format!("{stem}.csv"));
            self.write_table(std::io::BufWriter::new(std::fs::File::create(&path)?), &header, &rows)?;
            written.push(path);
        }
        let path = dir.join("timing.csv");
        self.write_timing_csv(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
        written.push(path);
        let path = dir.join("summary.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.summary())? + "\n")?;
        written.push(path);
        Ok(written)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> ExperimentReport {
        let mut a = ReportRow::blank("covgrid", SolverKind::PodPce, 2, 1);
        a.ok = true;
        a.rmse_truth = 0.5;
        a.reason = "done, with a comma".into();
        let b = ReportRow::blank("covgrid", SolverKind::PodPce, 2, 1).fail(&Error::invalid("boom"));
        ExperimentReport {
            experiment: "covgrid".into(),
            seed: 42,
            config_hash: "abc".into(),
            param_names: vec!["K2".into(), "MTL".into()],
            station_ids: vec!["P1".into()],
            rows: vec![a, b],
            wall_seconds: vec![0.1, 0.2],
        }
    }

    #[test]
    fn csv_has_provenance_and_fixed_header() {
        let r = report();
        let text = r.to_csv_string().unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# podvar "));
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(header.len(), r.header().len());
        assert!(header.contains(&"x_a_std_MTL") && header.contains(&"rmse_P1"));
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let recs: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(recs.len(), 2);
        assert_eq!(&recs[0][10], "ok");
        assert_eq!(recs[0][11].parse::<f64>().unwrap(), 0.5);
        assert_eq!(&recs[1][10], "error");
    }

    #[test]
    fn summary_counts_failures() {
        let s = report().summary();
        assert_eq!(s["cells"], 2);
        assert_eq!(s["failed"], 1);
        assert_eq!(s["groups"][0]["mean"], 0.5);
    }
}
