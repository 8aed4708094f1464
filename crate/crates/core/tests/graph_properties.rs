use std::collections::HashSet;

use etdnet::etdnet::{predict, EtdnetParams, GraphPlan, ModelConfig};
use etdnet::fhgraph::{read_jsonl, write_jsonl, EdgeFamily, FullHistoryGraph};
use etdnet::synthdata::{random_graph, RandomGraphSpec};
use proptest::prelude::*;

fn spec() -> impl Strategy<Value = (RandomGraphSpec, u64)> {
    (1usize..7, 1u32..6, 0usize..4, 0.0f64..0.6, 0.0f64..0.5, any::<u64>()).prop_map(
        |(entities, timesteps, statics, intra_prob, cross_prob, seed)| {
            let spec = RandomGraphSpec {
                entities,
                timesteps,
                statics,
                intra_prob,
                cross_prob,
                ..RandomGraphSpec::small()
            };
            (spec, seed)
        },
    )
}

fn graph() -> impl Strategy<Value = FullHistoryGraph> {
    spec().prop_map(|(s, seed)| random_graph(&s, seed).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inter_edges_form_a_forward_dag(g in graph()) {
        prop_assert_eq!(g.inter_topological_order().unwrap().len(), g.len());
        for e in g.inter_edges() {
            let (s, d) = (&g.node(e.src).id, &g.node(e.dst).id);
            prop_assert!(s.timestep().unwrap() < d.timestep().unwrap());
        }
    }

    #[test]
    fn edge_families_are_disjoint(g in graph()) {
        let intra: HashSet<_> = g.intra_edges().iter().map(|e| (e.src, e.dst)).collect();
        for e in g.inter_edges() {
            prop_assert!(!intra.contains(&(e.src, e.dst)));
        }
        for e in g.edges() {
            let same_step = e.src.timestep().is_none() || e.dst.timestep().is_none()
                || e.src.timestep() == e.dst.timestep();
            prop_assert_eq!(e.family == EdgeFamily::Intra, same_step);
        }
    }

    #[test]
    fn history_windows_nest_and_are_capped(g in graph(), b in 0usize..5) {
        for i in 0..g.len() {
            let small = g.predecessors_window_idx(i, b);
            let large: HashSet<usize> = g.predecessors_window_idx(i, b + 1).into_iter().collect();
            prop_assert!(small.len() <= b);
            prop_assert!(small.iter().all(|j| large.contains(j)));
            if g.node(i).id.is_static() {
                prop_assert!(small.is_empty());
            }
        }
    }

    #[test]
    fn jsonl_round_trip_is_lossless(g in graph()) {
        let mut buf = Vec::new();
        write_jsonl(&g, &mut buf).unwrap();
        let back = read_jsonl(buf.as_slice()).unwrap();
        prop_assert_eq!(g.canonical(), back.canonical());
    }

    #[test]
    fn predictions_survive_an_order_preserving_rename(g in graph(), seed in 0u64..100) {
        let cfg = ModelConfig { d: 8, d_in: 3, layers: 1, sa_heads: 2, sa_sublayers: 1, ha_heads: 2, window: 3, ..Default::default() };
        let params = EtdnetParams::init(&cfg, seed).unwrap();
        let base = predict(&cfg, &params, &GraphPlan::new(&g, cfg.window).unwrap()).unwrap();
        let padded = g.replicate(1).unwrap();
        let again = predict(&cfg, &params, &GraphPlan::new(&padded, cfg.window).unwrap()).unwrap();
        prop_assert_eq!(base.max_abs_diff(&again), 0.0);
    }
}
