//! Full-history graphs: one node per (entity, timestep) plus static nodes,
//! with intra-timestep edges `D` and inter-timestep edges `H` kept apart.

mod jsonl;

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use jsonl::{load_jsonl, read_jsonl, save_jsonl, write_jsonl};

/// Identity of a node in the time-unfolded graph.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum NodeId {
    Dynamic { entity: String, t: u32 },
    Static { entity: String },
}

impl NodeId {
    pub fn dynamic(entity: impl Into<String>, t: u32) -> Self {
        NodeId::Dynamic {
            entity: entity.into(),
            t,
        }
    }

    pub fn fixed(entity: impl Into<String>) -> Self {
        NodeId::Static {
            entity: entity.into(),
        }
    }

    pub fn entity(&self) -> &str {
        match self {
            NodeId::Dynamic { entity, .. } | NodeId::Static { entity } => entity,
        }
    }

    pub fn timestep(&self) -> Option<u32> {
        match self {
            NodeId::Dynamic { t, .. } => Some(*t),
            NodeId::Static { .. } => None,
        }
    }

    pub fn is_static(&self) -> bool {
        matches!(self, NodeId::Static { .. })
    }
}

/// Dynamic nodes by (timestep, entity), then static nodes by entity.
impl Ord for NodeId {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (NodeId::Dynamic { entity: a, t: ta }, NodeId::Dynamic { entity: b, t: tb }) => {
                ta.cmp(tb).then_with(|| a.cmp(b))
            }
            (NodeId::Dynamic { .. }, NodeId::Static { .. }) => Ordering::Less,
            (NodeId::Static { .. }, NodeId::Dynamic { .. }) => Ordering::Greater,
            (NodeId::Static { entity: a }, NodeId::Static { entity: b }) => a.cmp(b),
        }
    }
}

impl PartialOrd for NodeId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Dynamic { entity, t } => write!(f, "{entity}@{t}"),
            NodeId::Static { entity } => write!(f, "{entity}"),
        }
    }
}

/// Task label attached to a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Dual { speed: usize, dir: usize },
    Binary { binary: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeRecord {
    pub id: NodeId,
    pub features: Vec<f64>,
    pub label: Option<Label>,
    /// Whether the node participates in the loss.
    pub mask: bool,
}

impl NodeRecord {
    pub fn new(id: NodeId, features: Vec<f64>) -> Self {
        NodeRecord {
            id,
            features,
            label: None,
            mask: false,
        }
    }

    pub fn labeled(id: NodeId, features: Vec<f64>, label: Label, mask: bool) -> Self {
        NodeRecord {
            id,
            features,
            label: Some(label),
            mask,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeFamily {
    Intra,
    Inter,
}

impl EdgeFamily {
    fn name(self) -> &'static str {
        match self {
            EdgeFamily::Intra => "intra",
            EdgeFamily::Inter => "inter",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub family: EdgeFamily,
    pub relation: Option<String>,
}

impl Edge {
    pub fn intra(src: NodeId, dst: NodeId) -> Self {
        Edge {
            src,
            dst,
            family: EdgeFamily::Intra,
            relation: None,
        }
    }

    pub fn inter(src: NodeId, dst: NodeId) -> Self {
        Edge {
            src,
            dst,
            family: EdgeFamily::Inter,
            relation: None,
        }
    }

    pub fn with_relation(mut self, relation: impl Into<String>) -> Self {
        self.relation = Some(relation.into());
        self
    }

    /// Checks the timestep rule of the edge's family.
    pub fn check_family(&self) -> Result<()> {
        let violation = |msg| Error::FamilyViolation {
            family: self.family.name(),
            src: self.src.clone(),
            dst: self.dst.clone(),
            msg,
        };
        match (self.family, self.src.timestep(), self.dst.timestep()) {
            (EdgeFamily::Intra, Some(a), Some(b)) if a != b => {
                Err(violation("dynamic endpoints at different timesteps"))
            }
            (EdgeFamily::Intra, _, _) => Ok(()),
            (EdgeFamily::Inter, Some(a), Some(b)) if b == a + 1 => Ok(()),
            (EdgeFamily::Inter, Some(_), Some(_)) => Err(violation("destination must be exactly one timestep later")),
            (EdgeFamily::Inter, _, _) => Err(violation("static nodes carry no history")),
        }
    }
}

/// An edge resolved to node indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeIdx {
    pub src: usize,
    pub dst: usize,
}

/// Validated, immutable full-history graph.
#[derive(Clone, Debug)]
pub struct FullHistoryGraph {
    nodes: Vec<NodeRecord>,
    index: HashMap<NodeId, usize>,
    edges: Vec<Edge>,
    intra: Vec<EdgeIdx>,
    inter: Vec<EdgeIdx>,
    /// Sources of intra edges into each node, insertion order.
    intra_in: Vec<Vec<usize>>,
    /// Sources of inter edges into each node, sorted by (timestep, entity).
    inter_in: Vec<Vec<usize>>,
    feature_dim: usize,
}

impl FullHistoryGraph {
    pub fn build(nodes: Vec<NodeRecord>, edges: Vec<Edge>) -> Result<Self> {
        let feature_dim = nodes.first().map_or(0, |n| n.features.len());
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(Error::Integrity(format!("duplicate node id {}", n.id)));
            }
            if n.features.len() != feature_dim {
                return Err(Error::Integrity(format!(
                    "node {} has {} features, expected {feature_dim}",
                    n.id,
                    n.features.len()
                )));
            }
            if n.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::Integrity(format!("node {} has a non-finite feature", n.id)));
            }
            if n.mask && n.label.is_none() {
                return Err(Error::Integrity(format!("node {} is in the loss mask but has no label", n.id)));
            }
        }

        let mut intra = Vec::new();
        let mut inter = Vec::new();
        let mut intra_in = vec![Vec::new(); nodes.len()];
        let mut inter_in = vec![Vec::new(); nodes.len()];
        let mut seen = HashSet::with_capacity(edges.len());
        for e in &edges {
            e.check_family()?;
            let lookup = |id: &NodeId| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Integrity(format!("edge endpoint {id} does not exist")))
            };
            let idx = EdgeIdx {
                src: lookup(&e.src)?,
                dst: lookup(&e.dst)?,
            };
            if !seen.insert((e.family, idx.src, idx.dst)) {
                return Err(Error::Integrity(format!(
                    "duplicate {} edge {} -> {}",
                    e.family.name(),
                    e.src,
                    e.dst
                )));
            }
            match e.family {
                EdgeFamily::Intra => {
                    intra.push(idx);
                    intra_in[idx.dst].push(idx.src);
                }
                EdgeFamily::Inter => {
                    inter.push(idx);
                    inter_in[idx.dst].push(idx.src);
                }
            }
        }
        for preds in &mut inter_in {
            preds.sort_by(|&a, &b| nodes[a].id.cmp(&nodes[b].id));
        }

        let g = FullHistoryGraph {
            nodes,
            index,
            edges,
            intra,
            inter,
            intra_in,
            inter_in,
            feature_dim,
        };
        g.inter_topological_order()?;
        Ok(g)
    }

    pub fn empty() -> Self {
        FullHistoryGraph::build(Vec::new(), Vec::new()).expect("empty graph is valid")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &NodeRecord {
        &self.nodes[i]
    }

    /// Edges as given to [`build`](Self::build), in input order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn intra_edges(&self) -> &[EdgeIdx] {
        &self.intra
    }

    pub fn inter_edges(&self) -> &[EdgeIdx] {
        &self.inter
    }

    pub fn index_of(&self, id: &NodeId) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownNode(id.clone()))
    }

    pub fn dynamic_count(&self) -> usize {
        self.nodes.iter().filter(|n| !n.id.is_static()).count()
    }

    pub fn max_timestep(&self) -> Option<u32> {
        self.nodes.iter().filter_map(|n| n.id.timestep()).max()
    }

    /// N_D(x): sources of intra edges into `x`, in insertion order.
    pub fn neighbors_intra(&self, x: &NodeId) -> Result<Vec<NodeId>> {
        let i = self.index_of(x)?;
        Ok(self.intra_in[i].iter().map(|&j| self.nodes[j].id.clone()).collect())
    }

    pub fn neighbors_intra_idx(&self, i: usize) -> &[usize] {
        &self.intra_in[i]
    }

    /// Direct inter-edge predecessors of node `i`, sorted by (timestep, entity).
    pub fn inter_predecessors_idx(&self, i: usize) -> &[usize] {
        &self.inter_in[i]
    }

    /// P_B(x): nodes that reach `x` along at most `window` inter edges,
    /// ascending by (timestep, entity), keeping the `window` most recent.
    pub fn predecessors_window(&self, x: &NodeId, window: usize) -> Result<Vec<NodeId>> {
        let i = self.index_of(x)?;
        if x.is_static() {
            return Err(Error::Contract(format!("static node {x} has no history window")));
        }
        Ok(self
            .predecessors_window_idx(i, window)
            .into_iter()
            .map(|j| self.nodes[j].id.clone())
            .collect())
    }

    /// Index form of [`predecessors_window`](Self::predecessors_window); a
    /// static node yields an empty window.
    pub fn predecessors_window_idx(&self, i: usize, window: usize) -> Vec<usize> {
        if window == 0 || self.nodes[i].id.is_static() {
            return Vec::new();
        }
        let mut found: Vec<usize> = Vec::new();
        let mut seen = HashSet::new();
        let mut frontier = vec![i];
        for _ in 0..window {
            let mut next = Vec::new();
            for &u in &frontier {
                for &p in &self.inter_in[u] {
                    if seen.insert(p) {
                        found.push(p);
                        next.push(p);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        found.sort_by(|&a, &b| self.nodes[a].id.cmp(&self.nodes[b].id));
        let skip = found.len().saturating_sub(window);
        found.split_off(skip)
    }

    /// Kahn's algorithm over inter edges only; fails on a cycle.
    pub fn inter_topological_order(&self) -> Result<Vec<usize>> {
        let n = self.nodes.len();
        let mut indeg: Vec<usize> = self.inter_in.iter().map(Vec::len).collect();
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in &self.inter {
            out[e.src].push(e.dst);
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &v in &out[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    queue.push_back(v);
                }
            }
        }
        if order.len() != n {
            return Err(Error::Integrity("inter edges contain a cycle".into()));
        }
        Ok(order)
    }

    /// Induced subgraph over dynamic nodes with t0 <= t < t1 plus every
    /// static node.
    pub fn time_window(&self, t0: u32, t1: u32) -> Result<Self> {
        let keep = |id: &NodeId| id.timestep().is_none_or(|t| t0 <= t && t < t1);
        let nodes: Vec<NodeRecord> = self.nodes.iter().filter(|n| keep(&n.id)).cloned().collect();
        let edges: Vec<Edge> = self
            .edges
            .iter()
            .filter(|e| keep(&e.src) && keep(&e.dst))
            .cloned()
            .collect();
        FullHistoryGraph::build(nodes, edges)
    }

    /// Disjoint union of `copies` replicas, entity ids suffixed `#k`.
    pub fn replicate(&self, copies: usize) -> Result<Self> {
        let rename = |id: &NodeId, k: usize| match id {
            NodeId::Dynamic { entity, t } => NodeId::dynamic(format!("{entity}#{k}"), *t),
            NodeId::Static { entity } => NodeId::fixed(format!("{entity}#{k}")),
        };
        let mut nodes = Vec::with_capacity(self.len() * copies);
        let mut edges = Vec::with_capacity(self.edges.len() * copies);
        for k in 0..copies {
            nodes.extend(self.nodes.iter().map(|n| NodeRecord {
                id: rename(&n.id, k),
                ..n.clone()
            }));
            edges.extend(self.edges.iter().map(|e| Edge {
                src: rename(&e.src, k),
                dst: rename(&e.dst, k),
                ..e.clone()
            }));
        }
        FullHistoryGraph::build(nodes, edges)
    }

    /// Nodes sorted by id and edges sorted by (family, src, dst).
    pub fn canonical(&self) -> (Vec<&NodeRecord>, Vec<&Edge>) {
        let mut nodes: Vec<&NodeRecord> = self.nodes.iter().collect();
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        let mut edges: Vec<&Edge> = self.edges.iter().collect();
        edges.sort_by(|a, b| {
            (a.family, &a.src, &a.dst, &a.relation).cmp(&(b.family, &b.src, &b.dst, &b.relation))
        });
        (nodes, edges)
    }
}

/// Structural equality up to node and edge order.
impl PartialEq for FullHistoryGraph {
    fn eq(&self, other: &Self) -> bool {
        self.canonical() == other.canonical()
    }
}

#[cfg(test)]
mod tests;
