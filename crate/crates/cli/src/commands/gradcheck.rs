use std::io::Write;

use etdnet::oracle::{fd_gradcheck, GradCheckOptions, ModelObjective};
use etdnet::synthdata::{random_graph, LabelKind, RandomGraphSpec};
use etdnet::{EtdnetParams, FullHistoryGraph, Head, LabeledBatch, ModelConfig};

use crate::config::{layered, read_config_file, section};
use crate::{CliError, CliResult, GradcheckArgs};

/// Small enough for exhaustive differences on most tensors.
pub fn gradcheck_defaults() -> ModelConfig {
    ModelConfig {
        d: 8,
        d_in: 4,
        layers: 2,
        sa_heads: 2,
        sa_sublayers: 2,
        ha_heads: 2,
        window: 3,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

/// A graph with at least two entities, three timesteps, one static node
/// and both edge families populated.
pub fn mixed_graph(cfg: &ModelConfig, seed: u64) -> CliResult<FullHistoryGraph> {
    let spec = RandomGraphSpec {
        entities: 3,
        timesteps: 4,
        statics: 2,
        feature_dim: cfg.d_in,
        labels: match cfg.head {
            Head::Binary => LabelKind::Binary,
            Head::DualClass { .. } => LabelKind::Dual,
        },
        ..RandomGraphSpec::small()
    };
    for k in 0..1000 {
        let g = random_graph(&spec, seed.wrapping_add(k))?;
        let has_static_edge = g.intra_edges().iter().any(|e| g.node(e.src).id.is_static());
        if has_static_edge && !g.inter_edges().is_empty() && g.nodes().iter().any(|n| n.mask) {
            return Ok(g);
        }
    }
    Err(CliError::numeric("could not draw a mixed graph"))
}

pub fn run(a: GradcheckArgs, out: &mut dyn Write) -> CliResult<()> {
    let file = read_config_file(a.config.as_deref())?;
    let flags = a.model.to_json()?;
    let cfg: ModelConfig = layered("model", &gradcheck_defaults(), &[section(&file, "model")?, Some(&flags)])?;
    cfg.validate()?;
    let g = mixed_graph(&cfg, a.seed)?;
    let unit = LabeledBatch::new(g, cfg.window)?;
    let params = EtdnetParams::init(&cfg, a.seed)?;
    let obj = ModelObjective {
        cfg: &cfg,
        units: vec![&unit],
    };
    let opts = GradCheckOptions {
        epsilon: a.epsilon,
        seed: a.seed,
        ..GradCheckOptions::default()
    };
    let report = fd_gradcheck(&obj, &params.tensors, opts)?;
    for (path, c) in &report.paths {
        writeln!(out, "{path} coords={} max_rel_error={:.3e}", c.coordinates, c.max_rel_error)?;
    }
    if let Some((path, worst)) = report.worst() {
        writeln!(out, "worst={worst:.3e} path={path} tol={:e}", a.tol)?;
    }
    if let Some(path) = &a.out {
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        std::fs::write(path, text)?;
    }
    let failures = report.failures(a.tol);
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::numeric(format!("gradient check failed on {}", failures.join(", "))))
    }
}
