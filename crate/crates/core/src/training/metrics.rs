use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class F1 for classes that occur in targets or predictions; `None`
/// for classes that occur in neither.
pub fn per_class_f1(pred: &[usize], target: &[usize], classes: usize) -> Vec<Option<f64>> {
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fneg = vec![0usize; classes];
    for (&p, &t) in pred.iter().zip(target) {
        if p == t {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fneg[t] += 1;
        }
    }
    (0..classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fneg[c];
            (denom > 0).then(|| 2.0 * tp[c] as f64 / denom as f64)
        })
        .collect()
}

/// Unweighted mean of per-class F1 over the classes that occur.
pub fn macro_f1(pred: &[usize], target: &[usize], classes: usize) -> f64 {
    let f: Vec<f64> = per_class_f1(pred, target, classes).into_iter().flatten().collect();
    if f.is_empty() {
        0.0
    } else {
        f.iter().sum::<f64>() / f.len() as f64
    }
}

/// F1 of the positive class at a fixed score threshold.
pub fn binary_f1(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Threshold in {0.01, …, 0.99} maximizing positive-class F1; the smallest
/// such threshold wins ties.
pub fn best_threshold(probs: &[f64], labels: &[bool]) -> (f64, f64) {
    let mut best = (0.5, f64::NEG_INFINITY);
    for k in 1..100 {
        let th = k as f64 / 100.0;
        let f = binary_f1(probs, labels, th);
        if f > best.1 {
            best = (th, f);
        }
    }
    best
}

fn counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y).count();
    (pos, labels.len() - pos)
}

/// ROC-AUC via the rank statistic; tied scores earn half credit.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("roc_auc"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 1-based midranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Area under the precision-recall curve as the step integral
/// Σ (R_k − R_{k−1}) · P_k over distinct score thresholds, descending.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("auprc"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// Which validation value drives early stopping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    MacroF1,
    JointAccuracy,
    IllicitF1,
}

impl std::str::FromStr for Monitor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro_f1" => Ok(Monitor::MacroF1),
            "joint_accuracy" => Ok(Monitor::JointAccuracy),
            "illicit_f1" => Ok(Monitor::IllicitF1),
            _ => Err(Error::config("monitor", format!("unknown monitor {s:?}"))),
        }
    }
}

/// Metrics over the masked nodes of an evaluation set. Fields that do not
/// apply to the task, or are undefined for the label set, are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub nodes: usize,
    pub loss: f64,
    pub macro_f1: f64,
    pub joint_accuracy: Option<f64>,
    pub speed_macro_f1: Option<f64>,
    pub dir_macro_f1: Option<f64>,
    pub speed_per_class_f1: Option<Vec<Option<f64>>>,
    pub dir_per_class_f1: Option<Vec<Option<f64>>>,
    pub illicit_f1: Option<f64>,
    pub threshold: Option<f64>,
    pub roc_auc: Option<f64>,
    pub auprc: Option<f64>,
}

impl EvalMetrics {
    pub fn monitor(&self, m: Monitor) -> f64 {
        match m {
            Monitor::MacroF1 => self.macro_f1,
            Monitor::JointAccuracy => self.joint_accuracy.unwrap_or(0.0),
            Monitor::IllicitF1 => self.illicit_f1.unwrap_or(0.0),
        }
    }

    /// Named scalar columns in a fixed order, for CSV output.
    pub fn columns(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("val_loss", Some(self.loss)),
            ("macro_f1", Some(self.macro_f1)),
            ("joint_accuracy", self.joint_accuracy),
            ("speed_macro_f1", self.speed_macro_f1),
            ("dir_macro_f1", self.dir_macro_f1),
            ("illicit_f1", self.illicit_f1),
            ("threshold", self.threshold),
            ("roc_auc", self.roc_auc),
            ("auprc", self.auprc),
        ]
    }
}

/// Dual-task metrics from predicted and true (speed, direction) classes.
pub fn dual_metrics(pred: &[(usize, usize)], target: &[(usize, usize)], n_speed: usize, n_dir: usize) -> EvalMetrics {
    let ps: Vec<usize> = pred.iter().map(|p| p.0).collect();
    let pd: Vec<usize> = pred.iter().map(|p| p.1).collect();
    let ts: Vec<usize> = target.iter().map(|p| p.0).collect();
    let td: Vec<usize> = target.iter().map(|p| p.1).collect();
    let fs = macro_f1(&ps, &ts, n_speed);
    let fd = macro_f1(&pd, &td, n_dir);
    let joint = pred.iter().zip(target).filter(|(p, t)| p == t).count() as f64 / pred.len().max(1) as f64;
    EvalMetrics {
        nodes: pred.len(),
        macro_f1: (fs + fd) / 2.0,
        joint_accuracy: Some(joint),
        speed_macro_f1: Some(fs),
        dir_macro_f1: Some(fd),
        speed_per_class_f1: Some(per_class_f1(&ps, &ts, n_speed)),
        dir_per_class_f1: Some(per_class_f1(&pd, &td, n_dir)),
        ..Default::default()
    }
}

/// Binary-task metrics from probabilities. With `threshold = None` the
/// operating point is swept on these same scores.
pub fn binary_metrics(probs: &[f64], labels: &[bool], threshold: Option<f64>) -> EvalMetrics {
    let th = threshold.unwrap_or_else(|| best_threshold(probs, labels).0);
    let pred: Vec<usize> = probs.iter().map(|&p| (p >= th) as usize).collect();
    let target: Vec<usize> = labels.iter().map(|&y| y as usize).collect();
    EvalMetrics {
        nodes: probs.len(),
        macro_f1: macro_f1(&pred, &target, 2),
        illicit_f1: Some(binary_f1(probs, labels, th)),
        threshold: Some(th),
        roc_auc: roc_auc(probs, labels).ok(),
        auprc: auprc(probs, labels).ok(),
        ..Default::default()
    }
}
