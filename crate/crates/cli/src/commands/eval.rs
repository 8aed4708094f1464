use std::io::Write;

use etdnet::etdnet::load_checkpoint;
use etdnet::training::evaluate;
use etdnet::Error;

use crate::data::{batches, feature_dim, load_graphs, split_steps};
use crate::{CliResult, EvalArgs};

pub fn run(a: EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let (cfg, params) = load_checkpoint(&a.checkpoint)?;
    let mut units = Vec::new();
    for (_, g) in load_graphs(&a.data)? {
        units.extend(split_steps(g, a.unit_steps.unwrap_or(0))?);
    }
    let dim = feature_dim(&units)?;
    if dim != cfg.d_in {
        return Err(Error::SchemaMismatch(format!("checkpoint expects d_in={} but the data has feature_dim={dim}", cfg.d_in)).into());
    }
    let m = evaluate(&cfg, &params, &batches(&units, cfg.window)?, a.threshold)?;
    writeln!(out, "nodes={}", m.nodes)?;
    for (name, v) in m.columns() {
        let name = name.strip_prefix("val_").unwrap_or(name);
        match v {
            Some(v) => writeln!(out, "{name}={v}")?,
            None => writeln!(out, "{name}=NA")?,
        }
    }
    if let Some(path) = &a.out {
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        std::fs::write(path, text)?;
    }
    Ok(())
}
