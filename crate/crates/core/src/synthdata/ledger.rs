//! Monthly transaction ledgers with planted laundering chains.
//!
//! A chain starts at a flagged source transaction whose first feature is set
//! to [`SOURCE_MARK`]; every later member looks like ordinary traffic and is
//! identifiable only by following spends back to the source. Features of all
//! other transactions keep their first coordinate at or below
//! [`FEATURE_CLAMP`], so the mark is unambiguous.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::GeneratorMetadata;
use crate::error::{Error, Result};
use crate::fhgraph::{Edge, FullHistoryGraph, Label, NodeId, NodeRecord};
use crate::numerics::rng::seeded_rng;

pub const SOURCE_MARK: f64 = 4.0;
pub const FEATURE_CLAMP: f64 = 2.5;
/// First-feature value above which a transaction counts as a flagged source.
pub const SOURCE_THRESHOLD: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LedgerScenarioConfig {
    pub n_months: usize,
    pub transactions_per_month: usize,
    pub illicit_fraction: f64,
    pub unknown_fraction: f64,
    pub fan_in_max: usize,
    pub feature_dim: usize,
    pub addresses_per_tx: usize,
    /// Inter hops between a chain's source and its last member.
    pub chain_hops: usize,
    pub seed: u64,
}

impl Default for LedgerScenarioConfig {
    fn default() -> Self {
        LedgerScenarioConfig {
            n_months: 12,
            transactions_per_month: 100,
            illicit_fraction: 0.02,
            unknown_fraction: 0.3,
            fan_in_max: 3,
            feature_dim: 94,
            addresses_per_tx: 3,
            chain_hops: 3,
            seed: 0,
        }
    }
}

impl LedgerScenarioConfig {
    pub fn total_transactions(&self) -> usize {
        self.n_months * self.transactions_per_month
    }

    pub fn illicit_count(&self) -> usize {
        (self.illicit_fraction * self.total_transactions() as f64).round() as usize
    }

    pub fn unknown_count(&self) -> usize {
        (self.unknown_fraction * self.total_transactions() as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_months == 0 || self.transactions_per_month == 0 {
            return Err(Error::config("n_months", "need at least one month with one transaction"));
        }
        for (field, v) in [("illicit_fraction", self.illicit_fraction), ("unknown_fraction", self.unknown_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(field, "must lie in [0, 1]"));
            }
        }
        if self.illicit_fraction + self.unknown_fraction > 1.0 {
            return Err(Error::config("unknown_fraction", "illicit_fraction + unknown_fraction exceeds 1"));
        }
        if self.fan_in_max == 0 {
            return Err(Error::config("fan_in_max", "must be positive"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim", "must be positive"));
        }
        if self.addresses_per_tx > self.transactions_per_month.max(1) {
            return Err(Error::config("addresses_per_tx", "exceeds the address pool size"));
        }
        let illicit = self.illicit_count();
        if illicit > 0 {
            let len = self.chain_hops + 1;
            if self.n_months < len {
                return Err(Error::config("n_months", format!("chains of {len} members need {len} months")));
            }
            let chains = illicit.div_ceil(len);
            if chains > self.transactions_per_month {
                return Err(Error::config("illicit_fraction", "more chains than transactions per month"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LedgerScenario {
    pub graph: FullHistoryGraph,
    /// Planted chains, source first.
    pub chains: Vec<Vec<NodeId>>,
    pub metadata: GeneratorMetadata,
}

impl LedgerScenario {
    /// Ground-truth illicit flag per node index.
    pub fn illicit_truth(&self) -> Vec<bool> {
        let members: HashSet<&NodeId> = self.chains.iter().flatten().collect();
        self.graph.nodes().iter().map(|n| members.contains(&n.id)).collect()
    }
}

fn tx_id(month: usize, i: usize) -> String {
    format!("t{month:02}-{i:04}")
}

fn addr_id(i: usize) -> String {
    format!("a{i:04}")
}

pub fn gen_ledger(cfg: &LedgerScenarioConfig) -> Result<LedgerScenario> {
    cfg.validate()?;
    let mut rng = seeded_rng(&[cfg.seed, 0x1ED6E5]);
    let months = cfg.n_months;
    let per = cfg.transactions_per_month;
    let len = cfg.chain_hops + 1;

    // Chain members, sliced so the last chain may be shorter.
    let illicit = cfg.illicit_count();
    let mut chains: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut slots: Vec<Vec<usize>> = (0..months)
        .map(|_| {
            let mut v: Vec<usize> = (0..per).collect();
            v.shuffle(&mut rng);
            v
        })
        .collect();
    let mut remaining = illicit;
    while remaining > 0 {
        let size = remaining.min(len);
        let start = rng.random_range(0..=months - len);
        let chain = (0..size)
            .map(|k| {
                let m = start + k;
                let i = slots[m].pop().ok_or_else(|| Error::config("illicit_fraction", "month is full"))?;
                Ok((m, i))
            })
            .collect::<Result<Vec<_>>>()?;
        chains.push(chain);
        remaining -= size;
    }
    let mut chain_pred: Vec<Vec<Option<(usize, usize)>>> = vec![vec![None; per]; months];
    let mut in_chain = vec![vec![false; per]; months];
    let mut is_source = vec![vec![false; per]; months];
    for chain in &chains {
        is_source[chain[0].0][chain[0].1] = true;
        for (k, &(m, i)) in chain.iter().enumerate() {
            in_chain[m][i] = true;
            if k > 0 {
                chain_pred[m][i] = Some(chain[k - 1]);
            }
        }
    }

    let licit: Vec<(usize, usize)> = (0..months)
        .flat_map(|m| (0..per).map(move |i| (m, i)))
        .filter(|&(m, i)| !in_chain[m][i])
        .collect();
    let mut unknown = vec![vec![false; per]; months];
    for &(m, i) in licit.choose_multiple(&mut rng, cfg.unknown_count()) {
        unknown[m][i] = true;
    }

    let mut nodes = Vec::with_capacity(months * per + per);
    for m in 0..months {
        for i in 0..per {
            let mut f: Vec<f64> = (0..cfg.feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            f[0] = if is_source[m][i] { SOURCE_MARK } else { f[0].min(FEATURE_CLAMP) };
            let id = NodeId::dynamic(tx_id(m, i), m as u32);
            nodes.push(if unknown[m][i] {
                NodeRecord::new(id, f)
            } else {
                let binary = in_chain[m][i] as usize;
                NodeRecord::labeled(id, f, Label::Binary { binary }, true)
            });
        }
    }
    let pool = per;
    for a in 0..pool {
        let f = (0..cfg.feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        nodes.push(NodeRecord::new(NodeId::fixed(addr_id(a)), f));
    }

    let mut edges = Vec::new();
    for m in 0..months {
        for i in 0..per {
            let dst = NodeId::dynamic(tx_id(m, i), m as u32);
            for a in rand::seq::index::sample(&mut rng, pool, cfg.addresses_per_tx) {
                edges.push(Edge::intra(NodeId::fixed(addr_id(a)), dst.clone()).with_relation("spends"));
            }
            if m == 0 {
                continue;
            }
            let mut budget = cfg.fan_in_max;
            if let Some((pm, pi)) = chain_pred[m][i] {
                edges.push(Edge::inter(NodeId::dynamic(tx_id(pm, pi), pm as u32), dst.clone()));
                budget -= 1;
            }
            // Chain outputs are spent only by the next chain member.
            let k = rng.random_range(0..=budget);
            let mut picked = 0;
            for p in rand::seq::index::sample(&mut rng, per, per) {
                if picked == k {
                    break;
                }
                if !in_chain[m - 1][p] {
                    edges.push(Edge::inter(NodeId::dynamic(tx_id(m - 1, p), (m - 1) as u32), dst.clone()));
                    picked += 1;
                }
            }
        }
    }

    let graph = FullHistoryGraph::build(nodes, edges)?;
    let chains: Vec<Vec<NodeId>> = chains
        .iter()
        .map(|c| c.iter().map(|&(m, i)| NodeId::dynamic(tx_id(m, i), m as u32)).collect())
        .collect();
    let labeled_illicit = illicit;
    let labeled_licit = licit.len() - cfg.unknown_count();
    let auc_defined = labeled_illicit > 0 && labeled_licit > 0;
    let metadata = GeneratorMetadata::new(
        "ledger",
        serde_json::to_value(cfg)?,
        serde_json::json!({
            "source_mark": SOURCE_MARK,
            "feature_clamp": FEATURE_CLAMP,
            "source_threshold": SOURCE_THRESHOLD,
            "chain_hops": cfg.chain_hops,
            "illicit_nodes": labeled_illicit,
            "licit_nodes": labeled_licit,
            "unknown_nodes": cfg.unknown_count(),
            "chains": chains.len(),
        }),
        &graph,
        Some(auc_defined),
    );
    Ok(LedgerScenario {
        graph,
        chains,
        metadata,
    })
}

/// Classifier that follows spends forward from flagged sources.
///
/// A node is flagged when its first feature exceeds [`SOURCE_THRESHOLD`] or
/// when it is reachable from such a node within `hops` inter edges.
pub fn chain_oracle(g: &FullHistoryGraph, hops: usize) -> Vec<bool> {
    let n = g.len();
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in g.inter_edges() {
        succ[e.src].push(e.dst);
    }
    let mut depth: Vec<Option<usize>> = vec![None; n];
    let mut frontier: Vec<usize> = (0..n)
        .filter(|&i| {
            let node = g.node(i);
            !node.id.is_static() && node.features[0] > SOURCE_THRESHOLD
        })
        .collect();
    for &i in &frontier {
        depth[i] = Some(0);
    }
    for level in 1..=hops {
        let mut next = Vec::new();
        for &u in &frontier {
            for &v in &succ[u] {
                if depth[v].is_none() {
                    depth[v] = Some(level);
                    next.push(v);
                }
            }
        }
        frontier = next;
    }
    depth.iter().map(Option::is_some).collect()
}
