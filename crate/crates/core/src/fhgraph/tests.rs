use std::collections::{BTreeSet, HashSet};

use proptest::prelude::*;

use super::*;
use crate::synthdata::{random_graph, RandomGraphSpec};

fn feat() -> Vec<f64> {
    vec![0.5, -1.25]
}

fn chain(entity: &str, steps: u32) -> (Vec<NodeRecord>, Vec<Edge>) {
    let nodes = (0..steps)
        .map(|t| NodeRecord::new(NodeId::dynamic(entity, t), feat()))
        .collect();
    let edges = (1..steps)
        .map(|t| Edge::inter(NodeId::dynamic(entity, t - 1), NodeId::dynamic(entity, t)))
        .collect();
    (nodes, edges)
}

/// One vehicle over t = 1, 2, 3 and three road objects, each touching the
/// vehicle at every timestep.
pub(crate) fn figure_one() -> FullHistoryGraph {
    let mut nodes: Vec<NodeRecord> = (1..=3)
        .map(|t| NodeRecord::labeled(NodeId::dynamic("car", t), feat(), Label::Dual { speed: 1, dir: 0 }, true))
        .collect();
    let mut edges = Vec::new();
    for s in ["lane", "stop", "crosswalk"] {
        nodes.push(NodeRecord::new(NodeId::fixed(s), feat()));
        for t in 1..=3 {
            edges.push(Edge::intra(NodeId::fixed(s), NodeId::dynamic("car", t)).with_relation("lane_contact"));
        }
    }
    for t in 2..=3 {
        edges.push(Edge::inter(NodeId::dynamic("car", t - 1), NodeId::dynamic("car", t)));
    }
    FullHistoryGraph::build(nodes, edges).unwrap()
}

#[test]
fn single_chain_counts() {
    let (nodes, edges) = chain("u", 3);
    let g = FullHistoryGraph::build(nodes, edges).unwrap();
    assert_eq!(g.len(), 3);
    assert_eq!(g.inter_edges().len(), 2);
    assert_eq!(g.intra_edges().len(), 0);
}

#[test]
fn figure_one_counts() {
    let g = figure_one();
    assert_eq!(g.len(), 6);
    assert_eq!(g.intra_edges().len(), 9);
    assert_eq!(g.inter_edges().len(), 2);
}

#[test]
fn family_rules_are_enforced() {
    let nodes = vec![
        NodeRecord::new(NodeId::dynamic("u", 3), feat()),
        NodeRecord::new(NodeId::dynamic("u", 5), feat()),
        NodeRecord::new(NodeId::dynamic("v", 3), feat()),
        NodeRecord::new(NodeId::fixed("s"), feat()),
    ];
    let gap = Edge::inter(NodeId::dynamic("u", 3), NodeId::dynamic("u", 5));
    assert!(matches!(
        FullHistoryGraph::build(nodes.clone(), vec![gap]),
        Err(Error::FamilyViolation { family: "inter", .. })
    ));
    let skew = Edge::intra(NodeId::dynamic("u", 3), NodeId::dynamic("u", 5));
    assert!(matches!(
        FullHistoryGraph::build(nodes.clone(), vec![skew]),
        Err(Error::FamilyViolation { family: "intra", .. })
    ));
    let from_static = Edge::inter(NodeId::fixed("s"), NodeId::dynamic("u", 3));
    assert!(matches!(
        FullHistoryGraph::build(nodes.clone(), vec![from_static]),
        Err(Error::FamilyViolation { .. })
    ));
    // Static endpoints are present at every timestep, and static–static
    // contacts are allowed.
    let ok = vec![
        Edge::intra(NodeId::fixed("s"), NodeId::dynamic("u", 5)),
        Edge::intra(NodeId::dynamic("v", 3), NodeId::fixed("s")),
        Edge::intra(NodeId::dynamic("u", 3), NodeId::dynamic("v", 3)),
    ];
    FullHistoryGraph::build(nodes, ok).unwrap();
}

#[test]
fn integrity_errors() {
    let dup = vec![
        NodeRecord::new(NodeId::dynamic("u", 0), feat()),
        NodeRecord::new(NodeId::dynamic("u", 0), feat()),
    ];
    assert!(matches!(FullHistoryGraph::build(dup, vec![]), Err(Error::Integrity(_))));

    let nodes = vec![NodeRecord::new(NodeId::dynamic("u", 0), feat())];
    let dangling = Edge::inter(NodeId::dynamic("u", 0), NodeId::dynamic("u", 1));
    assert!(matches!(
        FullHistoryGraph::build(nodes.clone(), vec![dangling]),
        Err(Error::Integrity(_))
    ));

    let ragged = vec![
        NodeRecord::new(NodeId::dynamic("u", 0), feat()),
        NodeRecord::new(NodeId::dynamic("v", 0), vec![1.0]),
    ];
    assert!(matches!(FullHistoryGraph::build(ragged, vec![]), Err(Error::Integrity(_))));

    let mut unlabeled = NodeRecord::new(NodeId::dynamic("u", 0), feat());
    unlabeled.mask = true;
    assert!(matches!(FullHistoryGraph::build(vec![unlabeled], vec![]), Err(Error::Integrity(_))));
}

#[test]
fn intra_neighbors() {
    let mut nodes: Vec<NodeRecord> = ["c", "a", "b", "d", "iso"]
        .iter()
        .map(|e| NodeRecord::new(NodeId::dynamic(*e, 0), feat()))
        .collect();
    nodes.push(NodeRecord::new(NodeId::dynamic("c", 1), feat()));
    let edges = ["d", "a", "b"]
        .iter()
        .map(|e| Edge::intra(NodeId::dynamic(*e, 0), NodeId::dynamic("c", 0)))
        .collect();
    let g = FullHistoryGraph::build(nodes, edges).unwrap();
    assert!(g.neighbors_intra(&NodeId::dynamic("iso", 0)).unwrap().is_empty());
    assert_eq!(
        g.neighbors_intra(&NodeId::dynamic("c", 0)).unwrap(),
        vec![NodeId::dynamic("d", 0), NodeId::dynamic("a", 0), NodeId::dynamic("b", 0)]
    );
    assert!(matches!(
        g.neighbors_intra(&NodeId::dynamic("zz", 0)),
        Err(Error::UnknownNode(_))
    ));
}

#[test]
fn intra_neighbors_match_full_scan() {
    for seed in 0..20 {
        let g = random_graph(&RandomGraphSpec::small(), seed).unwrap();
        for n in g.nodes() {
            let got: Vec<NodeId> = g.neighbors_intra(&n.id).unwrap();
            let scanned: Vec<NodeId> = g
                .edges()
                .iter()
                .filter(|e| e.family == EdgeFamily::Intra && e.dst == n.id)
                .map(|e| e.src.clone())
                .collect();
            assert_eq!(got, scanned);
        }
    }
}

#[test]
fn window_on_a_chain() {
    let (nodes, edges) = chain("u", 5);
    let g = FullHistoryGraph::build(nodes, edges).unwrap();
    assert_eq!(
        g.predecessors_window(&NodeId::dynamic("u", 4), 2).unwrap(),
        vec![NodeId::dynamic("u", 2), NodeId::dynamic("u", 3)]
    );
    assert!(g.predecessors_window(&NodeId::dynamic("u", 0), 8).unwrap().is_empty());
    assert_eq!(g.predecessors_window(&NodeId::dynamic("u", 4), 8).unwrap().len(), 4);
}

#[test]
fn window_fan_in_breaks_ties_by_entity() {
    let nodes = vec![
        NodeRecord::new(NodeId::dynamic("q", 2), feat()),
        NodeRecord::new(NodeId::dynamic("p", 2), feat()),
        NodeRecord::new(NodeId::dynamic("q", 3), feat()),
    ];
    let edges = vec![
        Edge::inter(NodeId::dynamic("q", 2), NodeId::dynamic("q", 3)),
        Edge::inter(NodeId::dynamic("p", 2), NodeId::dynamic("q", 3)),
    ];
    let g = FullHistoryGraph::build(nodes, edges).unwrap();
    assert_eq!(
        g.predecessors_window(&NodeId::dynamic("q", 3), 2).unwrap(),
        vec![NodeId::dynamic("p", 2), NodeId::dynamic("q", 2)]
    );
    // Over-full window keeps the last entry in (timestep, entity) order.
    assert_eq!(
        g.predecessors_window(&NodeId::dynamic("q", 3), 1).unwrap(),
        vec![NodeId::dynamic("q", 2)]
    );
}

#[test]
fn window_rejects_static() {
    let g = figure_one();
    assert!(matches!(
        g.predecessors_window(&NodeId::fixed("lane"), 4),
        Err(Error::Contract(_))
    ));
}

/// Independent reference: every node whose timestep lies within `window`
/// steps and that reaches `x` by some chain of inter edges found by
/// scanning the full edge list.
fn window_by_scan(g: &FullHistoryGraph, x: &NodeId, window: usize) -> Vec<NodeId> {
    let t = x.timestep().unwrap();
    let mut reach: BTreeSet<NodeId> = BTreeSet::new();
    let mut level: BTreeSet<NodeId> = BTreeSet::from([x.clone()]);
    for _ in 0..window {
        let next: BTreeSet<NodeId> = g
            .edges()
            .iter()
            .filter(|e| e.family == EdgeFamily::Inter && level.contains(&e.dst))
            .map(|e| e.src.clone())
            .collect();
        reach.extend(next.iter().cloned());
        level = next;
    }
    let all: Vec<NodeId> = reach.into_iter().filter(|p| p.timestep().unwrap() < t).collect();
    all[all.len().saturating_sub(window)..].to_vec()
}

#[test]
fn window_matches_scan_reference() {
    for seed in 0..30 {
        let g = random_graph(&RandomGraphSpec::small(), seed).unwrap();
        for n in g.nodes().iter().filter(|n| !n.id.is_static()) {
            for b in [1, 2, 3, 8] {
                assert_eq!(g.predecessors_window(&n.id, b).unwrap(), window_by_scan(&g, &n.id, b));
            }
        }
    }
}

#[test]
fn jsonl_round_trips() {
    let empty = FullHistoryGraph::empty();
    let mut buf = Vec::new();
    write_jsonl(&empty, &mut buf).unwrap();
    assert!(buf.is_empty());
    assert_eq!(read_jsonl(buf.as_slice()).unwrap(), empty);

    let fig = figure_one();
    let mut buf = Vec::new();
    write_jsonl(&fig, &mut buf).unwrap();
    assert_eq!(read_jsonl(buf.as_slice()).unwrap(), fig);

    let spec = RandomGraphSpec {
        entities: 100,
        timesteps: 9,
        statics: 100,
        intra_prob: 0.01,
        static_prob: 0.003,
        static_static_prob: 0.002,
        cross_prob: 0.005,
        ..RandomGraphSpec::small()
    };
    let big = random_graph(&spec, 7).unwrap();
    assert_eq!(big.len(), 1000);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.jsonl");
    save_jsonl(&big, &path).unwrap();
    let back = load_jsonl(&path).unwrap();
    assert_eq!(back, big);
    // Bitwise float identity, not just structural.
    for (a, b) in back.canonical().0.iter().zip(big.canonical().0.iter()) {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.features), bits(&b.features));
    }
}

#[test]
fn jsonl_line_format() {
    let fig = figure_one();
    let mut buf = Vec::new();
    write_jsonl(&fig, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        r#"{"kind":"node","id":{"entity":"car","t":1},"features":[0.5,-1.25],"label":{"speed":1,"dir":0},"mask":true}"#
    );
    assert_eq!(lines[3], r#"{"kind":"node","id":{"entity":"lane"},"features":[0.5,-1.25]}"#);
    assert_eq!(
        lines[6],
        r#"{"kind":"edge","family":"intra","src":{"entity":"lane"},"dst":{"entity":"car","t":1},"relation":"lane_contact"}"#
    );
}

#[test]
fn jsonl_errors_carry_line_numbers() {
    let text = "{\"kind\":\"node\",\"id\":{\"entity\":\"a\",\"t\":0},\"features\":[1.0]}\n{not json\n";
    match read_jsonl(text.as_bytes()) {
        Err(Error::Parse { line: 2, .. }) => {}
        other => panic!("expected parse error on line 2, got {other:?}"),
    }
    let text = "{\"kind\":\"node\",\"id\":{\"entity\":\"a\",\"t\":0}}\n";
    match read_jsonl(text.as_bytes()) {
        Err(Error::Schema { line: 1, msg }) => assert!(msg.contains("features"), "{msg}"),
        other => panic!("expected schema error, got {other:?}"),
    }
    let text = "{\"kind\":\"wormhole\"}\n";
    assert!(matches!(read_jsonl(text.as_bytes()), Err(Error::Schema { line: 1, .. })));
    let text = "{\"kind\":\"node\",\"id\":{\"entity\":\"a\",\"t\":0},\"features\":[1.0],\"label\":{\"binary\":1},\"mask\":true}\n";
    let g = read_jsonl(text.as_bytes()).unwrap();
    assert_eq!(g.node(0).label, Some(Label::Binary { binary: 1 }));
}

#[test]
fn time_window_and_replicate() {
    let g = figure_one();
    let w = g.time_window(2, 4).unwrap();
    assert_eq!(w.dynamic_count(), 2);
    assert_eq!(w.intra_edges().len(), 6);
    assert_eq!(w.inter_edges().len(), 1);
    let r = g.replicate(3).unwrap();
    assert_eq!(r.len(), 18);
    assert_eq!(r.intra_edges().len(), 27);
    assert_eq!(r.inter_edges().len(), 6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn structural_invariants(seed in any::<u64>()) {
        let g = random_graph(&RandomGraphSpec::small(), seed).unwrap();
        prop_assert_eq!(g.inter_topological_order().unwrap().len(), g.len());
        let intra: HashSet<(usize, usize)> = g.intra_edges().iter().map(|e| (e.src, e.dst)).collect();
        prop_assert!(g.inter_edges().iter().all(|e| !intra.contains(&(e.src, e.dst))));
        for n in g.nodes().iter().filter(|n| !n.id.is_static()) {
            let t = n.id.timestep().unwrap();
            for b in 1..6usize {
                let small = g.predecessors_window(&n.id, b).unwrap();
                let large = g.predecessors_window(&n.id, b + 1).unwrap();
                prop_assert!(small.len() <= b);
                prop_assert!(small.iter().all(|p| large.contains(p)));
                prop_assert!(small.iter().all(|p| p.timestep().unwrap() < t));
            }
        }
    }
}
