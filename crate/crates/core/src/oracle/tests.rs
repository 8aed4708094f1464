use super::*;
use crate::error::{Error, Result};
use crate::etdnet::{step_attention, EtdnetParams, GraphPlan, Mode, ModelConfig};
use crate::fhgraph::{Edge, FullHistoryGraph, NodeId, NodeRecord};
use crate::numerics::{ParamMap, Tape, Tensor};
use crate::synthdata::{gen_traffic, random_graph, RandomGraphSpec, TrafficScenarioConfig};

fn cfg() -> ModelConfig {
    ModelConfig {
        d: 8,
        d_in: 3,
        layers: 2,
        sa_heads: 2,
        sa_sublayers: 2,
        ha_heads: 2,
        window: 3,
        dropout: 0.0,
        ..Default::default()
    }
}

fn sparse_sa(g: &FullHistoryGraph, h: &Tensor, cfg: &ModelConfig, params: &EtdnetParams) -> Tensor {
    let plan = GraphPlan::new(g, cfg.window).unwrap();
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let hv = tape.constant(h.clone());
    let m = step_attention(&mut tape, &plan, hv, &p, cfg, 1).unwrap();
    tape.value(m).clone()
}

fn features_as_h(g: &FullHistoryGraph, d: usize) -> Tensor {
    let rows: Vec<Vec<f64>> = g
        .nodes()
        .iter()
        .map(|n| (0..d).map(|j| n.features[j % n.features.len()] * (1.0 + j as f64 * 0.1)).collect())
        .collect();
    Tensor::from_rows(&rows)
}

#[test]
fn dense_sa_without_edges_is_layer_normed_residual() {
    let c = ModelConfig {
        sa_sublayers: 1,
        ..cfg()
    };
    let params = EtdnetParams::init(&c, 1).unwrap();
    let spec = RandomGraphSpec {
        intra_prob: 0.0,
        static_prob: 0.0,
        static_static_prob: 0.0,
        ..RandomGraphSpec::small()
    };
    let g = random_graph(&spec, 1).unwrap();
    let h = features_as_h(&g, 8);
    let dense = dense_sa_reference(&g, &h, &c, &params, 1).unwrap();
    for i in 0..g.len() {
        let x = h.row(i);
        let mean = x.iter().sum::<f64>() / 8.0;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        for (j, v) in dense.row(i).iter().enumerate() {
            assert!((v - (x[j] - mean) / (var + 1e-5).sqrt()).abs() < 1e-12);
        }
    }
}

#[test]
fn dense_sa_agrees_with_sparse_on_random_graphs() {
    let c = cfg();
    for seed in 0..40 {
        let params = EtdnetParams::init(&c, seed).unwrap();
        let spec = RandomGraphSpec {
            entities: 1 + (seed as usize % 6),
            timesteps: 1 + (seed as u32 % 5),
            statics: seed as usize % 4,
            ..RandomGraphSpec::small()
        };
        let g = random_graph(&spec, seed).unwrap();
        assert!(g.len() <= 50);
        let h = features_as_h(&g, 8);
        let d = sparse_sa(&g, &h, &c, &params).max_abs_diff(&dense_sa_reference(&g, &h, &c, &params, 1).unwrap());
        assert!(d < 1e-10, "seed {seed}: {d}");
    }
}

/// f(p) = Σ c_i p_i + ½ Σ p_i², exact gradient c + p.
struct Quadratic {
    c: ParamMap,
    corrupt: Option<String>,
}

impl Objective for Quadratic {
    fn loss(&self, params: &ParamMap) -> Result<f64> {
        Ok(params
            .iter()
            .map(|(k, t)| t.data().iter().zip(self.c[k].data()).map(|(p, c)| c * p + 0.5 * p * p).sum::<f64>())
            .sum())
    }

    fn gradient(&self, params: &ParamMap) -> Result<ParamMap> {
        Ok(params
            .iter()
            .map(|(k, t)| {
                let scale = if self.corrupt.as_deref() == Some(k.as_str()) { 1.1 } else { 1.0 };
                let g = t.data().iter().zip(self.c[k].data()).map(|(p, c)| scale * (c + p)).collect();
                (k.clone(), Tensor::new(t.shape().to_vec(), g).unwrap())
            })
            .collect())
    }
}

fn quad_params() -> (ParamMap, ParamMap) {
    let mut p = ParamMap::new();
    let mut c = ParamMap::new();
    p.insert("a".into(), Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.0, -0.7]).unwrap());
    c.insert("a".into(), Tensor::new(vec![2, 3], vec![1.0, 2.0, -3.0, 0.5, 0.25, 4.0]).unwrap());
    p.insert("b".into(), Tensor::vector(vec![3.0, -2.0]));
    c.insert("b".into(), Tensor::vector(vec![-1.0, 1.5]));
    (p, c)
}

#[test]
fn gradcheck_is_tight_on_a_quadratic() {
    let (p, c) = quad_params();
    let report = fd_gradcheck(&Quadratic { c, corrupt: None }, &p, GradCheckOptions::default()).unwrap();
    assert!(report.worst().unwrap().1 < 1e-9);
}

#[test]
fn gradcheck_flags_exactly_the_corrupted_path() {
    let (p, c) = quad_params();
    let obj = Quadratic {
        c,
        corrupt: Some("b".into()),
    };
    let report = fd_gradcheck(&obj, &p, GradCheckOptions::default()).unwrap();
    assert_eq!(report.failures(1e-4), vec!["b"]);
}

#[test]
fn gradcheck_samples_large_tensors() {
    let mut p = ParamMap::new();
    let mut c = ParamMap::new();
    p.insert("big".into(), Tensor::filled(&[70, 70], 0.3));
    c.insert("big".into(), Tensor::filled(&[70, 70], -0.2));
    let report = fd_gradcheck(&Quadratic { c, corrupt: None }, &p, GradCheckOptions::default()).unwrap();
    assert_eq!(report.paths["big"].coordinates, 64);
}

struct Exploding;

impl Objective for Exploding {
    fn loss(&self, _: &ParamMap) -> Result<f64> {
        Ok(f64::NAN)
    }

    fn gradient(&self, params: &ParamMap) -> Result<ParamMap> {
        Ok(params.clone())
    }
}

#[test]
fn gradcheck_aborts_on_non_finite_loss() {
    let (p, _) = quad_params();
    assert!(matches!(fd_gradcheck(&Exploding, &p, GradCheckOptions::default()), Err(Error::NonFinite { .. })));
}

#[test]
fn empty_graph_costs_nothing() {
    let r = count_flops(&FullHistoryGraph::empty(), &cfg()).unwrap();
    assert_eq!(r.total(), 0);
    assert_eq!((r.per_layer_sa, r.per_layer_ha, r.per_layer_fl, r.peak_live_bytes), (0, 0, 0, 0));
}

fn one_way_vs_both_ways() -> (FullHistoryGraph, FullHistoryGraph) {
    let mut nodes = Vec::new();
    let mut one = Vec::new();
    let mut both = Vec::new();
    for t in 0..3u32 {
        for i in 0..5 {
            nodes.push(NodeRecord::new(NodeId::dynamic(format!("v{i}"), t), vec![0.1 * i as f64, 0.2, -0.3]));
            if t > 0 {
                let e = Edge::inter(NodeId::dynamic(format!("v{i}"), t - 1), NodeId::dynamic(format!("v{i}"), t));
                one.push(e.clone());
                both.push(e);
            }
            for j in 0..i {
                let (a, b) = (NodeId::dynamic(format!("v{i}"), t), NodeId::dynamic(format!("v{j}"), t));
                one.push(Edge::intra(a.clone(), b.clone()));
                both.push(Edge::intra(a.clone(), b.clone()));
                both.push(Edge::intra(b, a));
            }
        }
    }
    (
        FullHistoryGraph::build(nodes.clone(), one).unwrap(),
        FullHistoryGraph::build(nodes, both).unwrap(),
    )
}

#[test]
fn doubling_intra_edges_doubles_sa_exactly() {
    let (a, b) = one_way_vs_both_ways();
    assert_eq!(b.intra_edges().len(), 2 * a.intra_edges().len());
    let (ra, rb) = (count_flops(&a, &cfg()).unwrap(), count_flops(&b, &cfg()).unwrap());
    assert_eq!(rb.sa, 2 * ra.sa);
    assert_eq!((rb.ha, rb.fl, rb.node_update), (ra.ha, ra.fl, ra.node_update));
}

#[test]
fn totals_are_the_sum_of_blocks() {
    for mode in Mode::ALL {
        let c = ModelConfig { mode, ..cfg() };
        let g = random_graph(&RandomGraphSpec::small(), 3).unwrap();
        let r = count_flops(&g, &c).unwrap();
        assert_eq!(r.total(), r.sa + r.ha + r.fl + r.node_update + r.input + r.head);
        assert_eq!(r.sa, c.layers as u64 * r.per_layer_sa);
        if mode == Mode::OnlySa {
            assert_eq!(r.ha, 0);
        }
        if mode == Mode::OnlyHa {
            assert_eq!(r.sa, 0);
        }
    }
}

#[test]
fn flops_grow_linearly_with_edge_count() {
    let c = cfg();
    let base = gen_traffic(&TrafficScenarioConfig::default()).unwrap().graph;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for copies in [1, 2, 3, 5, 8, 13] {
        let g = base.replicate(copies).unwrap();
        x.push((g.intra_edges().len() + g.inter_edges().len()) as f64);
        y.push(count_flops(&g, &c).unwrap().total() as f64);
    }
    let (_, _, r2) = linear_fit(&x, &y);
    assert!(r2 > 0.99, "{r2}");
}

#[test]
fn ha_buffers_stay_within_a_constant_times_window_width() {
    for (d, heads, window) in [(8, 2, 1), (8, 2, 8), (32, 4, 3), (128, 2, 8)] {
        let c = ModelConfig {
            d,
            ha_heads: heads,
            window,
            ..cfg()
        };
        let g = random_graph(&RandomGraphSpec::small(), 4).unwrap();
        let r = count_flops(&g, &c).unwrap();
        assert!(r.ha_live_scalars_per_node <= 6 * (window * d) as u64);
    }
}

#[test]
fn straight_line_rejects_missing_params() {
    let c = cfg();
    let mut params = EtdnetParams::init(&c, 0).unwrap();
    params.tensors.remove("layer1/fl/F");
    let g = random_graph(&RandomGraphSpec::small(), 0).unwrap();
    assert!(matches!(straight_line_forward(&g, &c, &params), Err(Error::Config { .. })));
}
