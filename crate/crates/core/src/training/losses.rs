use crate::error::{Error, Result};
use crate::etdnet::{ForwardOutput, Logits};
use crate::fhgraph::Label;
use crate::numerics::{Tape, Var};

/// Mean over masked nodes of CE(speed) + CE(direction).
pub fn dual_cross_entropy(
    tape: &mut Tape,
    speed: Var,
    dir: Var,
    targets: &[Option<(usize, usize)>],
    mask: &[bool],
) -> Result<Var> {
    let rows: Vec<(usize, usize, usize)> = targets
        .iter()
        .zip(mask)
        .enumerate()
        .filter_map(|(i, (t, &m))| if m { t.map(|(s, d)| (i, s, d)) } else { None })
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if rows.len() != mask.iter().filter(|&&m| m).count() {
        return Err(Error::Contract("masked node without a target".into()));
    }
    let w = 1.0 / rows.len() as f64;
    dual_ce_sum(tape, speed, dir, &rows, w)
}

fn dual_ce_sum(tape: &mut Tape, speed: Var, dir: Var, rows: &[(usize, usize, usize)], weight: f64) -> Result<Var> {
    let a = tape.cross_entropy(speed, rows.iter().map(|&(i, s, _)| (i, s)).collect(), weight)?;
    let b = tape.cross_entropy(dir, rows.iter().map(|&(i, _, d)| (i, d)).collect(), weight)?;
    tape.add(a, b)
}

/// Stable logit-space BCE averaged over masked nodes. Unmasked rows never
/// enter the op, so they contribute exactly zero loss and gradient.
pub fn masked_bce(tape: &mut Tape, logits: Var, targets: &[Option<f64>], mask: &[bool]) -> Result<Var> {
    let rows: Vec<(usize, f64)> = targets
        .iter()
        .zip(mask)
        .enumerate()
        .filter_map(|(i, (t, &m))| if m { t.map(|y| (i, y)) } else { None })
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if rows.len() != mask.iter().filter(|&&m| m).count() {
        return Err(Error::Contract("masked node without a target".into()));
    }
    let w = 1.0 / rows.len() as f64;
    tape.bce_with_logits(logits, rows, w)
}

/// `weight · Σ` of per-node losses over the masked nodes of one graph,
/// reading targets from node labels. Returns `None` when nothing is masked.
pub fn weighted_loss(tape: &mut Tape, out: &ForwardOutput, labels: &[(bool, Option<Label>)], weight: f64) -> Result<Option<Var>> {
    match out.logits {
        Logits::Dual { speed, dir } => {
            let mut rows = Vec::new();
            for (i, (mask, label)) in labels.iter().enumerate() {
                if !mask {
                    continue;
                }
                match label {
                    Some(Label::Dual { speed, dir }) => rows.push((i, *speed, *dir)),
                    _ => return Err(Error::Contract(format!("node {i} is masked but has no dual label"))),
                }
            }
            if rows.is_empty() {
                return Ok(None);
            }
            dual_ce_sum(tape, speed, dir, &rows, weight).map(Some)
        }
        Logits::Binary(z) => {
            let mut rows = Vec::new();
            for (i, (mask, label)) in labels.iter().enumerate() {
                if !mask {
                    continue;
                }
                match label {
                    Some(Label::Binary { binary }) => rows.push((i, *binary as f64)),
                    _ => return Err(Error::Contract(format!("node {i} is masked but has no binary label"))),
                }
            }
            if rows.is_empty() {
                return Ok(None);
            }
            tape.bce_with_logits(z, rows, weight).map(Some)
        }
    }
}
