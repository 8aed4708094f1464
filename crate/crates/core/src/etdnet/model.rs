use super::config::{Head, Mode, ModelConfig};
use super::layers::{fusion, history_attention, step_attention, zeros, ForwardCtx};
use super::params::{BoundParams, EtdnetParams};
use super::plan::GraphPlan;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub enum Logits {
    Dual { speed: Var, dir: Var },
    Binary(Var),
}

/// Logit values detached from any tape.
#[derive(Clone, Debug, PartialEq)]
pub enum LogitValues {
    Dual { speed: Tensor, dir: Tensor },
    Binary(Tensor),
}

impl LogitValues {
    pub fn max_abs_diff(&self, other: &LogitValues) -> f64 {
        match (self, other) {
            (LogitValues::Dual { speed: a, dir: b }, LogitValues::Dual { speed: c, dir: d }) => {
                a.max_abs_diff(c).max(b.max_abs_diff(d))
            }
            (LogitValues::Binary(a), LogitValues::Binary(b)) => a.max_abs_diff(b),
            _ => f64::INFINITY,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub logits: Logits,
    /// Final embedding h^(L) (after the late projection in LateFusion).
    pub embedding: Var,
}

impl ForwardOutput {
    pub fn values(&self, tape: &Tape) -> LogitValues {
        match self.logits {
            Logits::Dual { speed, dir } => LogitValues::Dual {
                speed: tape.value(speed).clone(),
                dir: tape.value(dir).clone(),
            },
            Logits::Binary(z) => LogitValues::Binary(tape.value(z).clone()),
        }
    }
}

fn dense(tape: &mut Tape, x: Var, p: &BoundParams, prefix: &str) -> Result<Var> {
    let y = tape.linear(x, p.var(&format!("{prefix}/W"))?)?;
    tape.add_bias(y, p.var(&format!("{prefix}/b"))?)
}

/// Input projection, `L` layers per `cfg.mode`, then the task head.
pub fn forward(tape: &mut Tape, plan: &GraphPlan, cfg: &ModelConfig, p: &BoundParams, ctx: ForwardCtx) -> Result<ForwardOutput> {
    if plan.features.cols() != cfg.d_in {
        return Err(Error::config(
            "d_in",
            format!("graph features have width {}, config says {}", plan.features.cols(), cfg.d_in),
        ));
    }
    if plan.n == 0 {
        return Err(Error::EmptyBatch);
    }
    if plan.window != cfg.window {
        return Err(Error::Contract(format!("plan built for B={}, config has B={}", plan.window, cfg.window)));
    }
    let n = plan.n;
    let d = cfg.d;
    let x = tape.constant(plan.features.clone());
    let h0 = dense(tape, x, p, "input")?;

    let embedding = if cfg.mode == Mode::LateFusion {
        let (mut hs, mut ht) = (h0, h0);
        for l in 0..cfg.layers {
            let m_d = step_attention(tape, plan, hs, p, cfg, l)?;
            let z = zeros(tape, n, d);
            hs = fusion(tape, hs, m_d, z, p, &format!("layer{l}/fl_sa"), cfg.dropout, ctx)?;
            let m_h = history_attention(tape, plan, ht, p, cfg, l)?;
            let z = zeros(tape, n, d);
            ht = fusion(tape, ht, z, m_h, p, &format!("layer{l}/fl_ha"), cfg.dropout, ctx)?;
        }
        let cat = tape.concat_cols(&[hs, ht])?;
        tape.linear(cat, p.var("late/proj")?)?
    } else {
        let mut h = h0;
        for l in 0..cfg.layers {
            let m_d = if cfg.mode.uses_sa() {
                step_attention(tape, plan, h, p, cfg, l)?
            } else {
                zeros(tape, n, d)
            };
            let m_h = if cfg.mode.uses_ha() {
                history_attention(tape, plan, h, p, cfg, l)?
            } else {
                zeros(tape, n, d)
            };
            h = fusion(tape, h, m_d, m_h, p, &format!("layer{l}/fl"), cfg.dropout, ctx)?;
        }
        h
    };

    let hidden = dense(tape, embedding, p, "head/hidden")?;
    let hidden = tape.relu(hidden);
    let logits = match cfg.head {
        Head::DualClass { .. } => Logits::Dual {
            speed: dense(tape, hidden, p, "head/speed")?,
            dir: dense(tape, hidden, p, "head/dir")?,
        },
        Head::Binary => Logits::Binary(dense(tape, hidden, p, "head/out")?),
    };
    Ok(ForwardOutput { logits, embedding })
}

/// Evaluation-mode logits (dropout off).
pub fn predict(cfg: &ModelConfig, params: &EtdnetParams, plan: &GraphPlan) -> Result<LogitValues> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let out = forward(&mut tape, plan, cfg, &p, ForwardCtx::default())?;
    Ok(out.values(&tape))
}

/// Evaluation-mode final embeddings h^(L).
pub fn embed(cfg: &ModelConfig, params: &EtdnetParams, plan: &GraphPlan) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let out = forward(&mut tape, plan, cfg, &p, ForwardCtx::default())?;
    Ok(tape.value(out.embedding).clone())
}
