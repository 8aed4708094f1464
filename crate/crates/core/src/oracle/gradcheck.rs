//! Central finite differences against analytic gradients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etdnet::{EtdnetParams, ForwardCtx, ModelConfig};
use crate::numerics::rng::{hash_str, seeded_rng};
use crate::numerics::{ParamMap, Tape};
use crate::training::{batch_loss, loss_and_grads, LabeledBatch};

/// A scalar function of a parameter map with an analytic gradient.
pub trait Objective {
    fn loss(&self, params: &ParamMap) -> Result<f64>;
    fn gradient(&self, params: &ParamMap) -> Result<ParamMap>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Tensors with at most this many scalars are checked exhaustively.
    pub full_limit: usize,
    /// Coordinates sampled from larger tensors.
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            full_limit: 4096,
            samples: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathCheck {
    pub max_rel_error: f64,
    pub coordinates: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub paths: BTreeMap<String, PathCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<(&str, f64)> {
        self.paths
            .iter()
            .map(|(k, v)| (k.as_str(), v.max_rel_error))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Paths whose worst relative error is not below `tol`.
    pub fn failures(&self, tol: f64) -> Vec<&str> {
        self.paths
            .iter()
            .filter(|(_, v)| !(v.max_rel_error < tol))
            .map(|(k, _)| k.as_str())
            .collect()
    }
}

/// |a − n| / max(|a| + |n|, 1e-6).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

pub fn fd_gradcheck(obj: &dyn Objective, params: &ParamMap, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let base = obj.loss(params)?;
    if !base.is_finite() {
        return Err(Error::NonFinite { path: "loss".into() });
    }
    let grads = obj.gradient(params)?;
    let mut work = params.clone();
    let mut report = GradCheckReport::default();
    for (path, t) in params {
        let n = t.len();
        let coords: Vec<usize> = if n <= opts.full_limit {
            (0..n).collect()
        } else {
            let mut rng = seeded_rng(&[opts.seed, hash_str(path)]);
            let mut c = rand::seq::index::sample(&mut rng, n, opts.samples.min(n)).into_vec();
            c.sort_unstable();
            c
        };
        let g = grads.get(path);
        let mut worst = 0.0f64;
        for &i in &coords {
            let x = t.data()[i];
            work.get_mut(path).expect("same keys").data_mut()[i] = x + opts.epsilon;
            let up = obj.loss(&work)?;
            work.get_mut(path).expect("same keys").data_mut()[i] = x - opts.epsilon;
            let down = obj.loss(&work)?;
            work.get_mut(path).expect("same keys").data_mut()[i] = x;
            if !(up.is_finite() && down.is_finite()) {
                return Err(Error::NonFinite { path: path.clone() });
            }
            let numeric = (up - down) / (2.0 * opts.epsilon);
            let analytic = g.map_or(0.0, |g| g.data()[i]);
            worst = worst.max(relative_error(analytic, numeric));
        }
        report.paths.insert(
            path.clone(),
            PathCheck {
                max_rel_error: worst,
                coordinates: coords.len(),
            },
        );
    }
    Ok(report)
}

/// The training loss of a model on a set of units, evaluation mode.
pub struct ModelObjective<'a> {
    pub cfg: &'a ModelConfig,
    pub units: Vec<&'a LabeledBatch>,
}

impl Objective for ModelObjective<'_> {
    fn loss(&self, params: &ParamMap) -> Result<f64> {
        let p = EtdnetParams { tensors: params.clone() };
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let loss = batch_loss(&mut tape, self.cfg, &bound, &self.units, ForwardCtx::default())?;
        Ok(tape.value(loss).data()[0])
    }

    fn gradient(&self, params: &ParamMap) -> Result<ParamMap> {
        let p = EtdnetParams { tensors: params.clone() };
        loss_and_grads(self.cfg, &p, &self.units).map(|(_, g)| g)
    }
}
