//! Fixtures shared by the benchmarks.

use etdnet::synthdata::{gen_traffic, TrafficScenarioConfig};
use etdnet::{FullHistoryGraph, ModelConfig};

/// A default traffic scene replicated `copies` times.
pub fn traffic_scene(copies: usize) -> FullHistoryGraph {
    let base = gen_traffic(&TrafficScenarioConfig::default()).expect("default traffic config is valid");
    base.graph.replicate(copies).expect("replicas of a valid graph are valid")
}

/// A model small enough to benchmark many sizes quickly.
pub fn bench_model(d: usize) -> ModelConfig {
    ModelConfig {
        d,
        d_in: etdnet::synthdata::traffic::MIN_FEATURE_DIM,
        layers: 2,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}
