use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curriculum::{Ensemble, PhaseRecord};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, RunKind};
use crate::metering::{EvalReport, LedgerSnapshot};
use crate::world::ModelId;

pub const SCHEMA_VERSION: u32 = 1;

/// One bisection probe of the NTP baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub pool_size: usize,
    pub successes: usize,
}

/// Everything a run produced. Serializes identically for identical inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub artifact_version: String,
    pub kind: RunKind,
    pub seed: u64,
    pub world_seed: u64,
    pub teacher: ModelId,
    pub config: ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cap: Option<usize>,
    /// Prompts drawn: the pool for curricula, the chosen size for baselines.
    pub prompts_used: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phases: Vec<PhaseRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<Ensemble>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probes: Vec<Probe>,
    pub training_cost: LedgerSnapshot,
    pub evaluation_cost: LedgerSnapshot,
    pub eval: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consensus: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter_complete: Option<bool>,
    pub reconciled: bool,
}

impl RunRecord {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: RunRecord = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if record.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported schema version {}",
                record.schema_version
            )));
        }
        Ok(record)
    }

    pub fn file_name(&self) -> String {
        format!("{}-eps{}-seed{}.json", self.kind, self.config.curriculum.eps, self.seed)
    }

    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(self.file_name());
        std::fs::write(&path, self.to_json()?)?;
        Ok(path)
    }
}
