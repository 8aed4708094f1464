use std::sync::Arc;

use crate::error::Result;
use crate::fhgraph::FullHistoryGraph;
use crate::numerics::Tensor;

/// Index arrays the layers gather and scatter through, precomputed once per
/// (graph, window).
#[derive(Clone, Debug)]
pub struct GraphPlan {
    pub n: usize,
    pub window: usize,
    pub features: Tensor,
    /// Intra edge sources and destinations, edge-aligned.
    pub sa_src: Arc<[usize]>,
    pub sa_dst: Arc<[usize]>,
    pub ha: HistoryPlan,
}

/// Flattened predecessor windows of the `M` nodes that have any history.
#[derive(Clone, Debug, Default)]
pub struct HistoryPlan {
    /// Node index of each of the M rows.
    pub nodes: Arc<[usize]>,
    /// Most recent predecessor of each row (the query row).
    pub last: Arc<[usize]>,
    /// One entry per (row, predecessor) pair.
    pub pair_pred: Arc<[usize]>,
    pub pair_slot: Arc<[usize]>,
    /// Window length m of each row.
    pub counts: Vec<usize>,
}

impl HistoryPlan {
    pub fn rows(&self) -> usize {
        self.nodes.len()
    }

    pub fn pairs(&self) -> usize {
        self.pair_pred.len()
    }
}

impl GraphPlan {
    pub fn new(g: &FullHistoryGraph, window: usize) -> Result<Self> {
        let n = g.len();
        let rows: Vec<Vec<f64>> = g.nodes().iter().map(|r| r.features.clone()).collect();
        let features = if n == 0 {
            Tensor::zeros(&[0, g.feature_dim()])
        } else {
            Tensor::from_rows(&rows)
        };
        let (src, dst): (Vec<usize>, Vec<usize>) = g.intra_edges().iter().map(|e| (e.src, e.dst)).unzip();

        let mut ha = HistoryPlan::default();
        let (mut nodes, mut last, mut pair_pred, mut pair_slot) = (vec![], vec![], vec![], vec![]);
        for i in 0..n {
            let preds = g.predecessors_window_idx(i, window);
            if let Some(&l) = preds.last() {
                let slot = nodes.len();
                nodes.push(i);
                last.push(l);
                ha.counts.push(preds.len());
                for p in preds {
                    pair_pred.push(p);
                    pair_slot.push(slot);
                }
            }
        }
        ha.nodes = nodes.into();
        ha.last = last.into();
        ha.pair_pred = pair_pred.into();
        ha.pair_slot = pair_slot.into();
        Ok(GraphPlan {
            n,
            window,
            features,
            sa_src: src.into(),
            sa_dst: dst.into(),
            ha,
        })
    }

    pub fn intra_count(&self) -> usize {
        self.sa_src.len()
    }
}
