//! Run configuration read by the command-line tool.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assimilate::{OptimizerConfig, SolverKind};
use crate::experiments::{
    config_hash, BootstrapSweep, ExperimentConfig, GridSweep, MeasureSweep, SingleRun, TwinSweep,
};
use crate::pce::PceConfig;
use crate::pod::Truncation;
use crate::toymodel::ToyModel;
use crate::{Error, Result};

pub const RUN_CONFIG_SCHEMA_VERSION: u32 = 1;

/// Settings of every subcommand in one document. Unknown keys are rejected
/// and absent sections take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    /// Toy model constants file; the shipped constants when absent.
    pub toymodel: Option<PathBuf>,
    pub sampling: SamplingSection,
    pub surrogate: SurrogateSection,
    pub truth: Option<Vec<f64>>,
    pub b_from_truth: bool,
    pub reference_members: usize,
    pub pce: PceConfig,
    pub optimizer: OptimizerConfig,
    pub assimilate: SingleRun,
    pub twin: TwinSweep,
    pub grid: GridSweep,
    pub bootstrap: BootstrapSweep,
    pub measure: MeasureSweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    pub members: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateSection {
    pub kind: SolverKind,
    pub truncation: Truncation,
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection { members: 400 }
    }
}

impl Default for SurrogateSection {
    fn default() -> Self {
        SurrogateSection {
            kind: SolverKind::PodPce,
            truncation: Truncation::EvrThreshold(0.95),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        RunConfig {
            schema_version: RUN_CONFIG_SCHEMA_VERSION,
            seed: e.seed,
            out: None,
            workers: None,
            toymodel: None,
            sampling: SamplingSection::default(),
            surrogate: SurrogateSection::default(),
            truth: e.truth,
            b_from_truth: e.b_from_truth,
            reference_members: e.reference_members,
            pce: e.pce,
            optimizer: e.optimizer,
            assimilate: e.assimilate,
            twin: e.twin,
            grid: e.grid,
            bootstrap: e.bootstrap,
            measure: e.measure,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: serde_json::Value = serde_json::from_str(text)?;
        if let Some(v) = doc.get("schema_version") {
            let found = v
                .as_u64()
                .ok_or_else(|| Error::invalid("schema_version must be a non-negative integer"))?;
            if found != RUN_CONFIG_SCHEMA_VERSION as u64 {
                return Err(Error::SchemaVersion {
                    kind: "run config".into(),
                    found: u32::try_from(found).unwrap_or(u32::MAX),
                    expected: RUN_CONFIG_SCHEMA_VERSION,
                });
            }
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::invalid(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sampling.members < 2 {
            return Err(Error::invalid("sampling.members must be at least 2"));
        }
        if self.workers == Some(0) {
            return Err(Error::invalid("workers must be at least 1"));
        }
        self.experiment().validate()
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            seed: self.seed,
            truth: self.truth.clone(),
            b_from_truth: self.b_from_truth,
            reference_members: self.reference_members,
            pce: self.pce,
            optimizer: self.optimizer,
            twin: self.twin.clone(),
            grid: self.grid.clone(),
            bootstrap: self.bootstrap.clone(),
            measure: self.measure.clone(),
            assimilate: self.assimilate.clone(),
        }
    }

    /// The toy model named by `toymodel`, resolved relative to `base`.
    pub fn model(&self, base: Option<&Path>) -> Result<ToyModel> {
        match &self.toymodel {
            None => Ok(ToyModel::default()),
            Some(p) => {
                let path = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                ToyModel::from_json(&std::fs::read_to_string(path)?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
        assert_eq!(cfg.hash().unwrap().len(), 64);
    }

    #[test]
    fn round_trip_preserves_hash() {
        let mut cfg = RunConfig::default();
        cfg.twin.noise_levels = vec![0.3];
        let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        let err = RunConfig::from_json(r#"{"twin": {"noise": [0.1]}}"#).unwrap_err();
        assert!(err.to_string().contains("unknown field"), "{err}");
        assert!(err.is_validation());
        let err = RunConfig::from_json(r#"{"schema_version": 2}"#).unwrap_err();
        assert_eq!(err.to_string(), "schema version mismatch for run config: found 2, expected 1");
    }
}
