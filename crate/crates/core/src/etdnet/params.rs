use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{Head, Mode, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::rng::{hash_str, seeded_rng};
use crate::numerics::{ParamMap, Tape, Tensor, Var};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in ±√(6/(fan_in+fan_out)).
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn matrix(path: String, rows: usize, cols: usize) -> ParamSpec {
    ParamSpec {
        path,
        shape: vec![rows, cols],
        init: Init::Glorot {
            fan_in: cols,
            fan_out: rows,
        },
    }
}

fn vector(path: String, len: usize, init: Init) -> ParamSpec {
    ParamSpec {
        path,
        shape: vec![len],
        init,
    }
}

fn layer_norm(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    out.push(vector(format!("{prefix}/ln_gain"), d, Init::Ones));
    out.push(vector(format!("{prefix}/ln_bias"), d, Init::Zeros));
}

fn fusion(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    out.push(matrix(format!("{prefix}/F"), d, 3 * d));
    layer_norm(out, prefix, d);
}

/// Every learnable tensor for `cfg`, in a stable order. Matrices are stored
/// `[out × in]` and applied as `x · Wᵀ`, except `ha/O`, which is stored
/// `[(H_t·d'') × d]` and applied as `x · O`.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.d;
    let ds = cfg.sa_width();
    let dt = cfg.ha_width();
    let mut out = vec![matrix("input/W".into(), d, cfg.d_in), vector("input/b".into(), d, Init::Zeros)];
    for l in 0..cfg.layers {
        if cfg.mode.uses_sa() {
            for k in 0..cfg.sa_sublayers {
                let p = format!("layer{l}/sa/k{k}");
                for r in 0..cfg.sa_heads {
                    for w in ["WQ", "WK", "WV"] {
                        out.push(matrix(format!("{p}/head{r}/{w}"), ds, d));
                    }
                    out.push(vector(
                        format!("{p}/head{r}/a"),
                        2 * ds,
                        Init::Glorot {
                            fan_in: 2 * ds,
                            fan_out: 1,
                        },
                    ));
                }
                out.push(matrix(format!("{p}/O"), d, d));
                layer_norm(&mut out, &p, d);
            }
        }
        if cfg.mode.uses_ha() {
            let p = format!("layer{l}/ha");
            if cfg.mode == Mode::HaMeanpool {
                out.push(matrix(format!("{p}/mean_proj"), d, d));
            } else {
                for r in 0..cfg.ha_heads {
                    for w in ["WQ", "WK", "WV"] {
                        out.push(matrix(format!("{p}/head{r}/{w}"), dt, d));
                    }
                }
                out.push(ParamSpec {
                    path: format!("{p}/O"),
                    shape: vec![cfg.ha_heads * dt, d],
                    init: Init::Glorot {
                        fan_in: cfg.ha_heads * dt,
                        fan_out: d,
                    },
                });
            }
            layer_norm(&mut out, &p, d);
        }
        if cfg.mode == Mode::LateFusion {
            fusion(&mut out, &format!("layer{l}/fl_sa"), d);
            fusion(&mut out, &format!("layer{l}/fl_ha"), d);
        } else {
            fusion(&mut out, &format!("layer{l}/fl"), d);
        }
    }
    if cfg.mode == Mode::LateFusion {
        out.push(matrix("late/proj".into(), d, 2 * d));
    }
    out.push(matrix("head/hidden/W".into(), d, d));
    out.push(vector("head/hidden/b".into(), d, Init::Zeros));
    match cfg.head {
        Head::DualClass { n_speed, n_dir } => {
            out.push(matrix("head/speed/W".into(), n_speed, d));
            out.push(vector("head/speed/b".into(), n_speed, Init::Zeros));
            out.push(matrix("head/dir/W".into(), n_dir, d));
            out.push(vector("head/dir/b".into(), n_dir, Init::Zeros));
        }
        Head::Binary => {
            out.push(matrix("head/out/W".into(), 1, d));
            out.push(vector("head/out/b".into(), 1, Init::Zeros));
        }
    }
    out
}

/// All learnable tensors of one model, keyed by stable path.
#[derive(Clone, Debug, PartialEq)]
pub struct EtdnetParams {
    pub tensors: ParamMap,
}

impl EtdnetParams {
    /// Each tensor draws from its own stream keyed by (seed, path), so paths
    /// shared between modes start from identical values.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut tensors = BTreeMap::new();
        for spec in param_specs(cfg) {
            let n: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Glorot { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let mut rng = seeded_rng(&[seed, hash_str(&spec.path)]);
                    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
                }
            };
            tensors.insert(spec.path, Tensor::new(spec.shape, data)?);
        }
        Ok(EtdnetParams { tensors })
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.tensors.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(path)
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Checks that paths and shapes match what `cfg` expects.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = param_specs(cfg);
        for spec in &specs {
            match self.tensors.get(&spec.path) {
                None => return Err(Error::SchemaMismatch(format!("missing parameter {}", spec.path))),
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    return Err(Error::SchemaMismatch(format!(
                        "parameter {} has shape {:?}, config expects {:?}",
                        spec.path,
                        t.shape(),
                        spec.shape
                    )))
                }
                Some(_) => {}
            }
        }
        if self.tensors.len() != specs.len() {
            let extra = self
                .tensors
                .keys()
                .find(|k| !specs.iter().any(|s| &s.path == *k))
                .cloned()
                .unwrap_or_default();
            return Err(Error::SchemaMismatch(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }

    /// Registers every tensor as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), tape.param(t.clone())))
                .collect(),
        }
    }
}

/// Tape handles for one [`EtdnetParams`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, path: &str) -> Result<Var> {
        self.vars
            .get(path)
            .copied()
            .ok_or_else(|| Error::config("params", format!("no parameter at path {path}")))
    }

    /// Gradients by path; parameters the loss never reached get zeros.
    pub fn grads(&self, tape: &Tape) -> ParamMap {
        self.vars
            .iter()
            .map(|(k, &v)| {
                let g = tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()));
                (k.clone(), g)
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format_version: u32,
    config: ModelConfig,
    params: BTreeMap<String, Tensor>,
}

pub fn checkpoint_to_string(cfg: &ModelConfig, params: &EtdnetParams) -> Result<String> {
    let doc = CheckpointDoc {
        format_version: CHECKPOINT_VERSION,
        config: cfg.clone(),
        params: params.tensors.clone(),
    };
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

pub fn checkpoint_from_str(text: &str) -> Result<(ModelConfig, EtdnetParams)> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let version = value.get("format_version").and_then(serde_json::Value::as_u64);
    if version != Some(CHECKPOINT_VERSION as u64) {
        return Err(Error::SchemaMismatch(format!(
            "checkpoint format_version {version:?}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let doc: CheckpointDoc = serde_json::from_value(value).map_err(|e| Error::SchemaMismatch(e.to_string()))?;
    doc.config.validate()?;
    for (path, t) in &doc.params {
        if t.len() != t.shape().iter().product::<usize>() {
            return Err(Error::SchemaMismatch(format!("parameter {path}: data length disagrees with shape")));
        }
    }
    let params = EtdnetParams { tensors: doc.params };
    params.check(&doc.config)?;
    Ok((doc.config, params))
}

pub fn save_checkpoint(path: impl AsRef<Path>, cfg: &ModelConfig, params: &EtdnetParams) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_to_string(cfg, params)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, EtdnetParams)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text)
}
