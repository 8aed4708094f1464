//! Deterministic synthetic scenarios whose labels follow fixed rules.

pub mod ledger;
mod random;
pub mod traffic;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fhgraph::{save_jsonl, FullHistoryGraph};

pub use ledger::{chain_oracle, gen_ledger, LedgerScenario, LedgerScenarioConfig};
pub use random::{random_graph, LabelKind, RandomGraphSpec};
pub use traffic::{gen_traffic, traffic_label, TrafficScenario, TrafficScenarioConfig};

pub const GENERATOR_VERSION: &str = "1";

/// Sidecar written next to a generated graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMetadata {
    pub generator: String,
    pub version: String,
    pub config: serde_json::Value,
    pub rules: serde_json::Value,
    pub nodes: usize,
    pub intra_edges: usize,
    pub inter_edges: usize,
    pub labeled_nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc_defined: Option<bool>,
}

impl GeneratorMetadata {
    pub fn new(
        generator: &str,
        config: serde_json::Value,
        rules: serde_json::Value,
        g: &FullHistoryGraph,
        auc_defined: Option<bool>,
    ) -> Self {
        GeneratorMetadata {
            generator: generator.to_string(),
            version: GENERATOR_VERSION.to_string(),
            config,
            rules,
            nodes: g.len(),
            intra_edges: g.intra_edges().len(),
            inter_edges: g.inter_edges().len(),
            labeled_nodes: g.nodes().iter().filter(|n| n.mask).count(),
            auc_defined,
        }
    }
}

/// Writes `graph.jsonl` and `metadata.json` into `dir`.
pub fn write_scenario(dir: &Path, graph: &FullHistoryGraph, meta: &GeneratorMetadata) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_jsonl(graph, dir.join("graph.jsonl"))?;
    let path = dir.join("metadata.json");
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Eight-node, linearly separable binary task: four entities over two
/// timesteps, labelled by the sign of the first feature.
pub fn micro_task() -> FullHistoryGraph {
    use crate::fhgraph::{Edge, Label, NodeId, NodeRecord};
    let xs = [[1.0, 0.2], [-1.0, 0.4], [0.8, -0.6], [-0.7, -0.1]];
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for t in 0..2u32 {
        for (i, x) in xs.iter().enumerate() {
            let f = vec![x[0] * (1.0 + 0.25 * t as f64), x[1]];
            let label = Label::Binary {
                binary: (f[0] > 0.0) as usize,
            };
            nodes.push(NodeRecord::labeled(NodeId::dynamic(format!("m{i}"), t), f, label, true));
            if t > 0 {
                edges.push(Edge::inter(NodeId::dynamic(format!("m{i}"), t - 1), NodeId::dynamic(format!("m{i}"), t)));
            }
        }
        edges.push(Edge::intra(NodeId::dynamic("m0", t), NodeId::dynamic("m1", t)));
        edges.push(Edge::intra(NodeId::dynamic("m2", t), NodeId::dynamic("m3", t)));
    }
    FullHistoryGraph::build(nodes, edges).expect("micro task is well formed")
}
