use std::io::Write;

use etdnet::oracle::{count_flops, linear_fit, FlopReport};
use etdnet::synthdata::{gen_ledger, gen_traffic, micro_task, LedgerScenarioConfig, TrafficScenarioConfig};
use etdnet::{Head, ModelConfig};
use serde::Serialize;

use crate::config::{cli_model_defaults, layered, read_config_file, section};
use crate::data::{feature_dim, infer_head, load_graphs};
use crate::{BenchArgs, CliError, CliResult};

#[derive(Serialize)]
struct Entry {
    size: usize,
    nodes: usize,
    intra: usize,
    inter: usize,
    report: FlopReport,
}

pub fn run(a: BenchArgs, out: &mut dyn Write) -> CliResult<()> {
    if a.sizes.is_empty() || a.sizes.contains(&0) {
        return Err(CliError::usage("sizes: need positive replication factors"));
    }
    let base = match (&a.data, a.scenario.as_str()) {
        (Some(p), _) => {
            let mut gs = load_graphs(std::slice::from_ref(p))?;
            if gs.len() != 1 {
                return Err(CliError::usage("data: bench takes exactly one graph"));
            }
            gs.remove(0).1
        }
        (None, "traffic") => gen_traffic(&TrafficScenarioConfig { seed: a.seed, ..Default::default() })?.graph,
        (None, "ledger") => gen_ledger(&LedgerScenarioConfig { seed: a.seed, ..Default::default() })?.graph,
        (None, "micro") => micro_task(),
        (None, s) => return Err(CliError::usage(format!("scenario: unknown scenario {s:?}"))),
    };
    let graphs = [base];
    let defaults = ModelConfig {
        d_in: feature_dim(&graphs)?,
        head: infer_head(&graphs)?.unwrap_or(Head::dual()),
        ..cli_model_defaults()
    };
    let file = read_config_file(a.config.as_deref())?;
    let flags = a.model.to_json()?;
    let cfg: ModelConfig = layered("model", &defaults, &[section(&file, "model")?, Some(&flags)])?;
    cfg.validate()?;

    let mut csv = String::from(
        "size,nodes,intra,inter,edges,sa,ha,fl,node_update,input,head,total,per_layer_sa,per_layer_ha,per_layer_fl,peak_live_bytes\n",
    );
    let mut entries = Vec::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for &size in &a.sizes {
        let g = graphs[0].replicate(size)?;
        let r = count_flops(&g, &cfg)?;
        let (intra, inter) = (g.intra_edges().len(), g.inter_edges().len());
        csv.push_str(&format!(
            "{size},{},{intra},{inter},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            g.len(),
            intra + inter,
            r.sa,
            r.ha,
            r.fl,
            r.node_update,
            r.input,
            r.head,
            r.total(),
            r.per_layer_sa,
            r.per_layer_ha,
            r.per_layer_fl,
            r.peak_live_bytes
        ));
        xs.push((intra + inter) as f64);
        ys.push(r.total() as f64);
        entries.push(Entry {
            size,
            nodes: g.len(),
            intra,
            inter,
            report: r,
        });
    }
    out.write_all(csv.as_bytes())?;
    let fit = (xs.len() >= 2).then(|| linear_fit(&xs, &ys));
    if let Some((slope, intercept, r2)) = fit {
        writeln!(out, "fit total ~ edges: slope={slope:.3} intercept={intercept:.3} r2={r2:.6}")?;
    }
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("bench.csv"), &csv)?;
        let json = serde_json::json!({
            "model": cfg,
            "sizes": entries,
            "fit": fit.map(|(slope, intercept, r2)| serde_json::json!({"slope": slope, "intercept": intercept, "r2": r2})),
        });
        let mut text = serde_json::to_string_pretty(&json)?;
        text.push('\n');
        std::fs::write(dir.join("flops.json"), text)?;
    }
    Ok(())
}
