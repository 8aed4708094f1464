//! The edge-type decoupled network: step attention over intra edges, history
//! attention over inter-edge predecessor windows, and a fusion layer.

mod config;
mod layers;
mod model;
mod params;
mod plan;

pub use config::{Head, Mode, ModelConfig};
pub use layers::{fusion, history_attention, step_attention, step_attention_traced, ForwardCtx};
pub use model::{embed, forward, predict, ForwardOutput, LogitValues, Logits};
pub use params::{
    checkpoint_from_str, checkpoint_to_string, load_checkpoint, param_specs, save_checkpoint, BoundParams,
    EtdnetParams, Init, ParamSpec, CHECKPOINT_VERSION,
};
pub use plan::{GraphPlan, HistoryPlan};
