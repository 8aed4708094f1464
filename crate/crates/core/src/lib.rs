//! Full-history graphs and the edge-type decoupled network, with exact
//! reverse-mode training, synthetic scenarios and brute-force oracles.

pub mod error;
pub mod etdnet;
pub mod fhgraph;
pub mod numerics;
pub mod oracle;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
pub use etdnet::{EtdnetParams, GraphPlan, Head, Mode, ModelConfig};
pub use fhgraph::{Edge, EdgeFamily, FullHistoryGraph, Label, NodeId, NodeRecord};
pub use numerics::{AdamState, ParamMap, Tape, Tensor, Var};
pub use oracle::FlopReport;
pub use training::{EpochReport, EvalMetrics, LabeledBatch, Monitor, TrainConfig};
