//! Analytic multiply-add counts for one evaluation-mode forward pass.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::etdnet::{GraphPlan, Head, Mode, ModelConfig};
use crate::fhgraph::FullHistoryGraph;

/// Multiply-add counts by block. `sa` covers the per-edge work of step
/// attention (projections, scores, aggregation), `ha` the per-window work
/// of history attention, `fl` the fusion layers. Per-node projections and
/// normalizations of the SA and HA outputs are in `node_update`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopReport {
    pub sa: u64,
    pub ha: u64,
    pub fl: u64,
    pub node_update: u64,
    pub input: u64,
    pub head: u64,
    /// The same three blocks for a single layer.
    pub per_layer_sa: u64,
    pub per_layer_ha: u64,
    pub per_layer_fl: u64,
    /// Largest number of HA scalars live at once for one node.
    pub ha_live_scalars_per_node: u64,
    /// Estimate of the largest live buffer set, in bytes of f64.
    pub peak_live_bytes: u64,
}

impl FlopReport {
    pub fn total(&self) -> u64 {
        self.sa + self.ha + self.fl + self.node_update + self.input + self.head
    }
}

/// Counts in terms of |D|, the number of history rows M, the pair count
/// Σm ≤ M·B, and |V|.
pub fn count_flops_plan(plan: &GraphPlan, cfg: &ModelConfig) -> FlopReport {
    let n = plan.n as u64;
    let e = plan.intra_count() as u64;
    let m = plan.ha.rows() as u64;
    let pairs = plan.ha.pairs() as u64;
    let d = cfg.d as u64;
    let layers = cfg.layers as u64;
    let ks = cfg.sa_sublayers as u64;
    let hs = cfg.sa_heads as u64;
    let ht = cfg.ha_heads as u64;
    let b = cfg.window as u64;
    let ln = 2 * d;

    let (mut sa, mut ha, mut node_update) = (0, 0, 0);
    if cfg.mode.uses_sa() {
        // Q, K, V per edge (3·d'·d per head), score 2d' and weighting d'
        // per head; summed over heads d' → d.
        sa = ks * e * (3 * d * d + 3 * d);
        node_update += ks * n * (d * d + ln);
    }
    if cfg.mode.uses_ha() {
        ha = if cfg.mode == Mode::HaMeanpool {
            pairs * d + m * d * d
        } else {
            // Query of the last row, K/V of every pair, dot and weighting.
            m * d * d + pairs * (2 * d * d + 2 * d)
        };
        let out_proj = if cfg.mode == Mode::HaMeanpool { 0 } else { m * d * d };
        node_update += out_proj + m * ln;
    }
    let fusions = if cfg.mode == Mode::LateFusion { 2 } else { 1 };
    let fl = fusions * n * (3 * d * d + ln);

    let classes = match cfg.head {
        Head::DualClass { n_speed, n_dir } => (n_speed + n_dir) as u64,
        Head::Binary => 1,
    };
    let late = if cfg.mode == Mode::LateFusion { n * 2 * d * d } else { 0 };
    let head = late + n * (d * d + d * classes);
    let input = n * cfg.d_in as u64 * d;

    let ha_live = b * (3 * d + ht) + 2 * d;
    let sa_live = e * (2 * d + 3 * d + hs);
    let ha_all = pairs * (3 * d + ht) + m * 2 * d;
    let fl_live = n * 4 * d;
    let peak = 8 * (n * d + sa_live.max(ha_all).max(fl_live));

    FlopReport {
        sa: layers * sa,
        ha: layers * ha,
        fl: layers * fl,
        node_update: layers * node_update,
        input,
        head,
        per_layer_sa: sa,
        per_layer_ha: ha,
        per_layer_fl: fl,
        ha_live_scalars_per_node: if cfg.mode.uses_ha() { ha_live } else { 0 },
        peak_live_bytes: if n == 0 { 0 } else { peak },
    }
}

pub fn count_flops(g: &FullHistoryGraph, cfg: &ModelConfig) -> Result<FlopReport> {
    Ok(count_flops_plan(&GraphPlan::new(g, cfg.window)?, cfg))
}

/// Slope, intercept and R² of an ordinary least-squares line.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - (slope * a + intercept)).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    (slope, intercept, r2)
}
