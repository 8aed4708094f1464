//! SA, HA and FL blocks recorded on a tape.

use super::config::{Mode, ModelConfig};
use super::params::BoundParams;
use super::plan::GraphPlan;
use crate::error::Result;
use crate::numerics::rng::{hash_str, mix};
use crate::numerics::{DropoutKey, Tape, Tensor, Var};

/// Dropout stream coordinates for one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardCtx {
    pub seed: u64,
    pub step: u64,
}

pub fn zeros(tape: &mut Tape, rows: usize, cols: usize) -> Var {
    tape.constant(Tensor::zeros(&[rows, cols]))
}

fn layer_norm(tape: &mut Tape, x: Var, p: &BoundParams, prefix: &str) -> Result<Var> {
    let gain = p.var(&format!("{prefix}/ln_gain"))?;
    let bias = p.var(&format!("{prefix}/ln_bias"))?;
    tape.layer_norm(x, gain, bias)
}

/// m^D for every node: `K_s` stacked attention sublayers over intra edges.
pub fn step_attention(tape: &mut Tape, plan: &GraphPlan, h: Var, p: &BoundParams, cfg: &ModelConfig, layer: usize) -> Result<Var> {
    step_attention_traced(tape, plan, h, p, cfg, layer).map(|(m, _)| m)
}

/// As [`step_attention`], also returning the edge-aligned attention weights
/// `[|D| × 1]` of every (sublayer, head), sublayer-major.
pub fn step_attention_traced(
    tape: &mut Tape,
    plan: &GraphPlan,
    h: Var,
    p: &BoundParams,
    cfg: &ModelConfig,
    layer: usize,
) -> Result<(Var, Vec<Var>)> {
    let n = plan.n;
    let ds = cfg.sa_width();
    let mut alphas = Vec::new();
    let mut h = h;
    for k in 0..cfg.sa_sublayers {
        let prefix = format!("layer{layer}/sa/k{k}");
        if plan.intra_count() == 0 {
            // Empty neighbourhoods aggregate to zero.
            h = layer_norm(tape, h, p, &prefix)?;
            continue;
        }
        let hu = tape.gather_rows(h, plan.sa_dst.clone())?;
        let hv = tape.gather_rows(h, plan.sa_src.clone())?;
        let mut heads = Vec::with_capacity(cfg.sa_heads);
        for r in 0..cfg.sa_heads {
            let hp = format!("{prefix}/head{r}");
            let q = tape.linear(hu, p.var(&format!("{hp}/WQ"))?)?;
            let key = tape.linear(hv, p.var(&format!("{hp}/WK"))?)?;
            let v = tape.linear(hv, p.var(&format!("{hp}/WV"))?)?;
            let a = tape.reshape(p.var(&format!("{hp}/a"))?, vec![1, 2 * ds])?;
            let qk = tape.concat_cols(&[q, key])?;
            let e = tape.linear(qk, a)?;
            let e = tape.leaky_relu(e, cfg.leaky_slope);
            let alpha = tape.segment_softmax(e, plan.sa_dst.clone(), n)?;
            alphas.push(alpha);
            let weighted = tape.scale_rows(v, alpha)?;
            heads.push(tape.scatter_add_rows(weighted, plan.sa_dst.clone(), n)?);
        }
        let cat = tape.concat_cols(&heads)?;
        let msg = tape.linear(cat, p.var(&format!("{prefix}/O"))?)?;
        let res = tape.add(msg, h)?;
        h = layer_norm(tape, res, p, &prefix)?;
    }
    Ok((h, alphas))
}

/// m^H for every node; rows without history are zero.
pub fn history_attention(tape: &mut Tape, plan: &GraphPlan, h: Var, p: &BoundParams, cfg: &ModelConfig, layer: usize) -> Result<Var> {
    let ha = &plan.ha;
    let m = ha.rows();
    if m == 0 {
        return Ok(zeros(tape, plan.n, cfg.d));
    }
    let prefix = format!("layer{layer}/ha");
    let hp = tape.gather_rows(h, ha.pair_pred.clone())?;
    let out = if cfg.mode == Mode::HaMeanpool {
        let sum = tape.scatter_add_rows(hp, ha.pair_slot.clone(), m)?;
        let inv: Vec<f64> = ha.counts.iter().map(|&c| 1.0 / c as f64).collect();
        let inv = tape.constant(Tensor::new(vec![m, 1], inv)?);
        let mean = tape.scale_rows(sum, inv)?;
        tape.linear(mean, p.var(&format!("{prefix}/mean_proj"))?)?
    } else {
        let hl = tape.gather_rows(h, ha.last.clone())?;
        let scale = 1.0 / (cfg.ha_width() as f64).sqrt();
        let mut heads = Vec::with_capacity(cfg.ha_heads);
        for r in 0..cfg.ha_heads {
            let hr = format!("{prefix}/head{r}");
            let q = tape.linear(hl, p.var(&format!("{hr}/WQ"))?)?;
            let key = tape.linear(hp, p.var(&format!("{hr}/WK"))?)?;
            let v = tape.linear(hp, p.var(&format!("{hr}/WV"))?)?;
            let qp = tape.gather_rows(q, ha.pair_slot.clone())?;
            let dot = tape.mul(qp, key)?;
            let s = tape.row_sum(dot)?;
            let s = tape.scale(s, scale);
            let alpha = tape.segment_softmax(s, ha.pair_slot.clone(), m)?;
            let weighted = tape.scale_rows(v, alpha)?;
            heads.push(tape.scatter_add_rows(weighted, ha.pair_slot.clone(), m)?);
        }
        let cat = tape.concat_cols(&heads)?;
        tape.matmul(cat, p.var(&format!("{prefix}/O"))?)?
    };
    let out = layer_norm(tape, out, p, &prefix)?;
    tape.scatter_add_rows(out, ha.nodes.clone(), plan.n)
}

/// LN(h + dropout(ReLU(F · [h ‖ m^D ‖ m^H]))).
pub fn fusion(
    tape: &mut Tape,
    h: Var,
    m_d: Var,
    m_h: Var,
    p: &BoundParams,
    prefix: &str,
    dropout: f64,
    ctx: ForwardCtx,
) -> Result<Var> {
    let cat = tape.concat_cols(&[h, m_d, m_h])?;
    let z = tape.linear(cat, p.var(&format!("{prefix}/F"))?)?;
    let z = tape.relu(z);
    let key = DropoutKey {
        seed: ctx.seed,
        step: ctx.step,
        site: mix(&[hash_str(prefix)]),
    };
    let z = tape.dropout(z, dropout, key)?;
    let res = tape.add(h, z)?;
    layer_norm(tape, res, p, prefix)
}
