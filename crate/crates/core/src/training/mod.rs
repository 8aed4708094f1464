//! Losses, metrics and the mini-batch loop with early stopping.

mod losses;
pub mod metrics;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etdnet::{forward, predict, EtdnetParams, ForwardCtx, GraphPlan, Head, LogitValues, ModelConfig};
use crate::fhgraph::{FullHistoryGraph, Label};
use crate::numerics::rng::seeded_rng;
use crate::numerics::{sigmoid, AdamState, Tape};
use crate::oracle::count_flops_plan;

pub use losses::{dual_cross_entropy, masked_bce, weighted_loss};
pub use metrics::{auprc, binary_metrics, dual_metrics, macro_f1, roc_auc, EvalMetrics, Monitor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub monitor: Monitor,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 1e-5,
            batch_size: 32,
            max_epochs: 100,
            patience: 7,
            seed: 0,
            monitor: Monitor::MacroF1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        for (field, v) in [("batch_size", self.batch_size), ("max_epochs", self.max_epochs), ("patience", self.patience)] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        Ok(())
    }
}

/// One training unit: a graph, its precomputed plan, and per-node targets
/// with a loss mask.
#[derive(Clone, Debug)]
pub struct LabeledBatch {
    pub graph: FullHistoryGraph,
    pub plan: GraphPlan,
    pub targets: Vec<Option<Label>>,
    pub mask: Vec<bool>,
}

impl LabeledBatch {
    pub fn new(graph: FullHistoryGraph, window: usize) -> Result<Self> {
        let plan = GraphPlan::new(&graph, window)?;
        let targets = graph.nodes().iter().map(|n| n.label).collect();
        let mask = graph.nodes().iter().map(|n| n.mask).collect();
        Ok(LabeledBatch {
            graph,
            plan,
            targets,
            mask,
        })
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    fn labels(&self) -> Vec<(bool, Option<Label>)> {
        self.mask.iter().copied().zip(self.targets.iter().copied()).collect()
    }
}

/// Records one forward pass per unit and the summed loss, scaled by the
/// total number of masked nodes across `units`.
pub fn batch_loss(
    tape: &mut Tape,
    cfg: &ModelConfig,
    p: &crate::etdnet::BoundParams,
    units: &[&LabeledBatch],
    ctx: ForwardCtx,
) -> Result<crate::numerics::Var> {
    let total: usize = units.iter().map(|u| u.masked_count()).sum();
    if total == 0 {
        return Err(Error::EmptyBatch);
    }
    let w = 1.0 / total as f64;
    let mut acc = None;
    for u in units {
        if u.masked_count() == 0 {
            continue;
        }
        let out = forward(tape, &u.plan, cfg, p, ctx)?;
        if let Some(l) = weighted_loss(tape, &out, &u.labels(), w)? {
            acc = Some(match acc {
                None => l,
                Some(a) => tape.add(a, l)?,
            });
        }
    }
    acc.ok_or(Error::EmptyBatch)
}

/// Loss and gradients by parameter path for `units`, evaluation mode.
pub fn loss_and_grads(cfg: &ModelConfig, params: &EtdnetParams, units: &[&LabeledBatch]) -> Result<(f64, crate::numerics::ParamMap)> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let loss = batch_loss(&mut tape, cfg, &p, units, ForwardCtx::default())?;
    tape.backward(loss)?;
    Ok((tape.value(loss).data()[0], p.grads(&tape)))
}

/// Masked-node metrics pooled over `batches`. For the binary head,
/// `threshold = None` sweeps the operating point on these batches.
pub fn evaluate(cfg: &ModelConfig, params: &EtdnetParams, batches: &[LabeledBatch], threshold: Option<f64>) -> Result<EvalMetrics> {
    let mut loss_sum = 0.0;
    let mut dual_pred = Vec::new();
    let mut dual_true = Vec::new();
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for b in batches {
        if b.masked_count() == 0 {
            continue;
        }
        let logits = predict(cfg, params, &b.plan)?;
        for i in (0..b.plan.n).filter(|&i| b.mask[i]) {
            match (&logits, b.targets[i]) {
                (LogitValues::Dual { speed, dir }, Some(Label::Dual { speed: ts, dir: td })) => {
                    let (ls, ps) = log_softmax_argmax(speed.row(i), ts);
                    let (ld, pd) = log_softmax_argmax(dir.row(i), td);
                    loss_sum += ls + ld;
                    dual_pred.push((ps, pd));
                    dual_true.push((ts, td));
                }
                (LogitValues::Binary(z), Some(Label::Binary { binary })) => {
                    let z = z.row(i)[0];
                    let y = binary as f64;
                    loss_sum += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
                    probs.push(sigmoid(z));
                    labels.push(binary == 1);
                }
                _ => return Err(Error::Contract(format!("masked node {i} has a label that does not fit the head"))),
            }
        }
    }
    let n = dual_pred.len() + probs.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut m = match cfg.head {
        Head::DualClass { n_speed, n_dir } => dual_metrics(&dual_pred, &dual_true, n_speed, n_dir),
        Head::Binary => binary_metrics(&probs, &labels, threshold),
    };
    m.loss = loss_sum / n as f64;
    Ok(m)
}

/// Negative log-likelihood of `target` and the argmax (first on ties).
fn log_softmax_argmax(row: &[f64], target: usize) -> (f64, usize) {
    let mut arg = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[arg] {
            arg = j;
        }
    }
    let max = row[arg];
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    (lse - row[target], arg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val: EvalMetrics,
    /// Forward multiply-adds over the training units for one epoch.
    pub flops: u64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best_params: EtdnetParams,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub reports: Vec<EpochReport>,
}

/// Adam over shuffled mini-batches of `tcfg.batch_size` units, validation
/// after every epoch, and early stopping on `tcfg.monitor`.
pub fn train(
    cfg: &ModelConfig,
    init: EtdnetParams,
    train_set: &[LabeledBatch],
    val_set: &[LabeledBatch],
    tcfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(cfg, init, train_set, val_set, tcfg, |_| {})
}

/// As [`train`], calling `on_epoch` after each report.
pub fn train_with(
    cfg: &ModelConfig,
    init: EtdnetParams,
    train_set: &[LabeledBatch],
    val_set: &[LabeledBatch],
    tcfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    tcfg.validate()?;
    init.check(cfg)?;
    if val_set.is_empty() {
        return Err(Error::config("val", "at least one validation batch is required"));
    }
    if train_set.is_empty() {
        return Err(Error::config("train", "at least one training batch is required"));
    }
    let flops: u64 = train_set.iter().map(|b| count_flops_plan(&b.plan, cfg).total()).sum();
    let mut params = init;
    let mut adam = AdamState::new(tcfg.lr, tcfg.weight_decay);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(usize, f64, EtdnetParams)> = None;
    let mut reports = Vec::new();
    let mut step = 0u64;

    for epoch in 1..=tcfg.max_epochs {
        let started = Instant::now();
        let mut rng = seeded_rng(&[tcfg.seed, epoch as u64, 0x5_4A1F]);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(tcfg.batch_size).enumerate() {
            let units: Vec<&LabeledBatch> = chunk.iter().map(|&i| &train_set[i]).collect();
            if units.iter().all(|u| u.masked_count() == 0) {
                continue;
            }
            let mut tape = Tape::training();
            let p = params.bind(&mut tape);
            let ctx = ForwardCtx { seed: tcfg.seed, step };
            let loss = batch_loss(&mut tape, cfg, &p, &units, ctx)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NanLoss { epoch, batch: bi });
            }
            tape.backward(loss)?;
            adam.step(&mut params.tensors, &p.grads(&tape))?;
            loss_sum += value;
            batches += 1;
            step += 1;
        }
        let val = evaluate(cfg, &params, val_set, None)?;
        let metric = val.monitor(tcfg.monitor);
        let report = EpochReport {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            val,
            flops,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        on_epoch(&report);
        reports.push(report);
        if best.as_ref().is_none_or(|b| metric > b.1) {
            best = Some((epoch, metric, params.clone()));
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.0);
        if epoch - best_epoch >= tcfg.patience {
            break;
        }
    }
    let (best_epoch, best_metric, best_params) = best.expect("max_epochs >= 1");
    Ok(TrainOutcome {
        best_params,
        best_epoch,
        best_metric,
        reports,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

/// Deterministic per-epoch metrics: `epoch,loss,<metric columns>,flops`.
pub fn write_metrics_csv<W: Write>(reports: &[EpochReport], mut w: W) -> Result<()> {
    let io = |e| Error::io("<metrics csv>", e);
    let cols: Vec<&str> = reports
        .first()
        .map(|r| r.val.columns().into_iter().map(|c| c.0).collect())
        .unwrap_or_else(|| EvalMetrics::default().columns().into_iter().map(|c| c.0).collect());
    writeln!(w, "epoch,loss,{},flops", cols.join(",")).map_err(io)?;
    for r in reports {
        let vals: Vec<String> = r.val.columns().into_iter().map(|c| fmt_opt(c.1)).collect();
        writeln!(w, "{},{},{},{}", r.epoch, r.train_loss, vals.join(","), r.flops).map_err(io)?;
    }
    Ok(())
}

/// Wall-clock timings, kept apart so the metrics file stays reproducible.
pub fn write_timings_csv<W: Write>(reports: &[EpochReport], mut w: W) -> Result<()> {
    let io = |e| Error::io("<timings csv>", e);
    writeln!(w, "epoch,wall_ms").map_err(io)?;
    for r in reports {
        writeln!(w, "{},{}", r.epoch, r.wall_ms).map_err(io)?;
    }
    Ok(())
}

pub fn save_reports(dir: &Path, reports: &[EpochReport]) -> Result<()> {
    let mut buf = Vec::new();
    write_metrics_csv(reports, &mut buf)?;
    let p = dir.join("metrics.csv");
    std::fs::write(&p, buf).map_err(|e| Error::io(&p, e))?;
    let mut buf = Vec::new();
    write_timings_csv(reports, &mut buf)?;
    let p = dir.join("timings.csv");
    std::fs::write(&p, buf).map_err(|e| Error::io(&p, e))
}
