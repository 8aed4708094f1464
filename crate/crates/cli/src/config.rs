//! Layered configuration: flags over a JSON file over defaults.

use std::path::{Path, PathBuf};

use clap::Args;
use etdnet::training::Monitor;
use etdnet::{Head, Mode, ModelConfig, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::{CliError, CliResult};

/// Layers used by the CLI unless a file or flag overrides them.
pub const CLI_DEFAULT_LAYERS: usize = 2;

#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    /// full | only-sa | only-ha | late-fusion | ha-meanpool
    #[arg(long)]
    pub mode: Option<String>,
    /// Hidden width.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub sa_heads: Option<usize>,
    #[arg(long)]
    pub sa_sublayers: Option<usize>,
    #[arg(long)]
    pub ha_heads: Option<usize>,
    /// History window B.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub leaky_slope: Option<f64>,
    /// dual | binary
    #[arg(long)]
    pub head: Option<String>,
}

impl ModelFlags {
    pub fn to_json(&self) -> CliResult<Map<String, Value>> {
        let mut m = Map::new();
        if let Some(s) = &self.mode {
            let mode: Mode = s.parse()?;
            m.insert("mode".into(), serde_json::to_value(mode)?);
        }
        if let Some(s) = &self.head {
            m.insert("head".into(), serde_json::to_value(parse_head(s)?)?);
        }
        let ints = [
            ("d", self.d),
            ("L", self.layers),
            ("H_s", self.sa_heads),
            ("K_s", self.sa_sublayers),
            ("H_t", self.ha_heads),
            ("B", self.window),
        ];
        for (k, v) in ints {
            if let Some(v) = v {
                m.insert(k.into(), json!(v));
            }
        }
        for (k, v) in [("dropout", self.dropout), ("leaky_slope", self.leaky_slope)] {
            if let Some(v) = v {
                m.insert(k.into(), json!(v));
            }
        }
        Ok(m)
    }
}

pub fn parse_head(s: &str) -> CliResult<Head> {
    match s {
        "dual" => Ok(Head::dual()),
        "binary" => Ok(Head::Binary),
        _ => Err(CliError::usage(format!("head: expected dual or binary, got {s:?}"))),
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Units per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Seeds parameter init, shuffling and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
    /// macro_f1 | joint_accuracy | illicit_f1
    #[arg(long)]
    pub monitor: Option<String>,
}

impl TrainFlags {
    pub fn to_json(&self) -> CliResult<Map<String, Value>> {
        let mut m = Map::new();
        if let Some(s) = &self.monitor {
            let monitor: Monitor = s.parse()?;
            m.insert("monitor".into(), serde_json::to_value(monitor)?);
        }
        for (k, v) in [("lr", self.lr), ("weight_decay", self.weight_decay)] {
            if let Some(v) = v {
                m.insert(k.into(), json!(v));
            }
        }
        for (k, v) in [("batch_size", self.batch_size), ("max_epochs", self.max_epochs), ("patience", self.patience)] {
            if let Some(v) = v {
                m.insert(k.into(), json!(v));
            }
        }
        if let Some(v) = self.seed {
            m.insert("seed".into(), json!(v));
        }
        Ok(m)
    }
}

/// Where training and validation units come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub train: Vec<PathBuf>,
    pub val: Vec<PathBuf>,
    pub val_fraction: f64,
    pub unit_steps: u32,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: Vec::new(),
            val: Vec::new(),
            val_fraction: 0.2,
            unit_steps: 0,
        }
    }
}

impl DataConfig {
    pub fn flags_to_json(a: &crate::DataArgs) -> Map<String, Value> {
        let mut m = Map::new();
        if !a.data.is_empty() {
            m.insert("train".into(), json!(a.data));
        }
        if !a.val.is_empty() {
            m.insert("val".into(), json!(a.val));
        }
        if let Some(v) = a.val_fraction {
            m.insert("val_fraction".into(), json!(v));
        }
        if let Some(v) = a.unit_steps {
            m.insert("unit_steps".into(), json!(v));
        }
        m
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.train.is_empty() {
            return Err(CliError::usage("data: at least one --data path is required"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(CliError::usage("val_fraction: must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// The effective configuration of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

/// Model defaults of the command line.
pub fn cli_model_defaults() -> ModelConfig {
    ModelConfig {
        layers: CLI_DEFAULT_LAYERS,
        ..ModelConfig::default()
    }
}

/// Batch size and monitor follow the task when nothing else sets them.
pub fn cli_train_defaults(head: Head) -> TrainConfig {
    match head {
        Head::DualClass { .. } => TrainConfig::default(),
        Head::Binary => TrainConfig {
            batch_size: 16,
            monitor: Monitor::IllicitF1,
            ..TrainConfig::default()
        },
    }
}

/// Reads a JSON object; `None` yields an empty object.
pub fn read_config_file(path: Option<&Path>) -> CliResult<Map<String, Value>> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(CliError::usage(format!("{}: expected a JSON object", path.display()))),
        Err(e) => Err(CliError::usage(format!("{}: {e}", path.display()))),
    }
}

/// The `section` object of a config file, if present.
pub fn section<'a>(file: &'a Map<String, Value>, name: &str) -> CliResult<Option<&'a Map<String, Value>>> {
    match file.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Object(m)) => Ok(Some(m)),
        Some(_) => Err(CliError::usage(format!("{name}: expected a JSON object"))),
    }
}

/// Applies `layers` in order on top of `base`. Keys unknown to `base` are
/// rejected with their dotted name.
pub fn layered<T: Serialize + DeserializeOwned>(
    scope: &str,
    base: &T,
    layers: &[Option<&Map<String, Value>>],
) -> CliResult<T> {
    let Value::Object(mut merged) = serde_json::to_value(base)? else {
        unreachable!("configs serialize as objects");
    };
    for layer in layers.iter().flatten() {
        for (k, v) in layer.iter() {
            if !merged.contains_key(k) {
                return Err(CliError::usage(format!("{scope}.{k}: unknown config field")));
            }
            merged.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::usage(format!("{scope}: {e}")))
}

/// True if any layer sets `key`.
pub fn is_set(key: &str, layers: &[Option<&Map<String, Value>>]) -> bool {
    layers.iter().flatten().any(|m| m.contains_key(key))
}
