use rand::Rng;

use crate::error::{Error, Result};
use crate::fhgraph::{Edge, FullHistoryGraph, Label, NodeId, NodeRecord};
use crate::numerics::rng::seeded_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelKind {
    Dual,
    Binary,
}

/// Shape of an unstructured random full-history graph, used for property
/// tests and oracle comparisons.
#[derive(Clone, Debug)]
pub struct RandomGraphSpec {
    pub entities: usize,
    pub timesteps: u32,
    pub statics: usize,
    pub feature_dim: usize,
    /// Probability of each ordered dynamic pair at one timestep.
    pub intra_prob: f64,
    /// Probability of each static→dynamic contact.
    pub static_prob: f64,
    /// Probability of each static→static contact.
    pub static_static_prob: f64,
    /// Probability that an entity links to its own next replica.
    pub self_chain_prob: f64,
    /// Probability of each cross-entity hand-off u@t → v@t+1.
    pub cross_prob: f64,
    pub labels: LabelKind,
    pub mask_prob: f64,
}

impl RandomGraphSpec {
    /// At most 4·4 + 2 = 18 nodes with both edge families populated.
    pub fn small() -> Self {
        RandomGraphSpec {
            entities: 4,
            timesteps: 4,
            statics: 2,
            feature_dim: 3,
            intra_prob: 0.35,
            static_prob: 0.3,
            static_static_prob: 0.5,
            self_chain_prob: 0.8,
            cross_prob: 0.2,
            labels: LabelKind::Dual,
            mask_prob: 0.8,
        }
    }
}

pub fn random_graph(spec: &RandomGraphSpec, seed: u64) -> Result<FullHistoryGraph> {
    if spec.entities == 0 || spec.timesteps == 0 {
        return Err(Error::config("random_graph", "need at least one entity and timestep"));
    }
    let mut rng = seeded_rng(&[seed, 0x5EED]);
    let mut nodes = Vec::new();
    let features = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..spec.feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    };
    let ent = |i: usize| format!("e{i:03}");
    let stat = |i: usize| format!("s{i:03}");
    for t in 0..spec.timesteps {
        for i in 0..spec.entities {
            let id = NodeId::dynamic(ent(i), t);
            let f = features(&mut rng);
            let label = match spec.labels {
                LabelKind::Dual => Label::Dual {
                    speed: rng.random_range(0..4),
                    dir: rng.random_range(0..5),
                },
                LabelKind::Binary => Label::Binary {
                    binary: rng.random_range(0..2),
                },
            };
            let mask = rng.random_bool(spec.mask_prob);
            nodes.push(NodeRecord::labeled(id, f, label, mask));
        }
    }
    for i in 0..spec.statics {
        let f = features(&mut rng);
        nodes.push(NodeRecord::new(NodeId::fixed(stat(i)), f));
    }

    let mut edges = Vec::new();
    for t in 0..spec.timesteps {
        for u in 0..spec.entities {
            for v in 0..spec.entities {
                if u != v && rng.random_bool(spec.intra_prob) {
                    edges.push(Edge::intra(NodeId::dynamic(ent(u), t), NodeId::dynamic(ent(v), t)));
                }
            }
            for s in 0..spec.statics {
                if rng.random_bool(spec.static_prob) {
                    edges.push(Edge::intra(NodeId::fixed(stat(s)), NodeId::dynamic(ent(u), t)));
                }
            }
        }
    }
    for a in 0..spec.statics {
        for b in 0..spec.statics {
            if a != b && rng.random_bool(spec.static_static_prob) {
                edges.push(Edge::intra(NodeId::fixed(stat(a)), NodeId::fixed(stat(b))));
            }
        }
    }
    for t in 1..spec.timesteps {
        for u in 0..spec.entities {
            for v in 0..spec.entities {
                let p = if u == v { spec.self_chain_prob } else { spec.cross_prob };
                if rng.random_bool(p) {
                    edges.push(Edge::inter(NodeId::dynamic(ent(u), t - 1), NodeId::dynamic(ent(v), t)));
                }
            }
        }
    }
    FullHistoryGraph::build(nodes, edges)
}
