use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use etdnet::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::config::DataConfig;
use crate::CliResult;

/// Everything needed to rerun a command. Its `model`, `train` and `data`
/// sections make it a valid `--config` file for `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub seed: u64,
    pub artifacts: BTreeMap<String, String>,
    pub results: serde_json::Value,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
