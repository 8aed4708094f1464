//! JSON-Lines interchange: one node or edge object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Edge, EdgeFamily, FullHistoryGraph, Label, NodeId, NodeRecord};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct IdRepr {
    entity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t: Option<u32>,
}

impl From<&NodeId> for IdRepr {
    fn from(id: &NodeId) -> Self {
        IdRepr {
            entity: id.entity().to_string(),
            t: id.timestep(),
        }
    }
}

impl From<IdRepr> for NodeId {
    fn from(r: IdRepr) -> Self {
        match r.t {
            Some(t) => NodeId::Dynamic { entity: r.entity, t },
            None => NodeId::Static { entity: r.entity },
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Node {
        id: IdRepr,
        features: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none", with = "nullable")]
        label: Option<Option<Label>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mask: Option<bool>,
    },
    Edge {
        family: EdgeFamily,
        src: IdRepr,
        dst: IdRepr,
        relation: Option<String>,
    },
}

/// Distinguishes an absent field (outer `None`) from an explicit `null`.
mod nullable {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, T: Serialize>(v: &Option<Option<T>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(inner) => inner.serialize(s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>, T: Deserialize<'de>>(d: D) -> Result<Option<Option<T>>, D::Error> {
        Option::<T>::deserialize(d).map(Some)
    }
}

pub fn write_jsonl<W: Write>(g: &FullHistoryGraph, mut w: W) -> Result<()> {
    let mut emit = |line: &Line| -> Result<()> {
        serde_json::to_writer(&mut w, line)?;
        w.write_all(b"\n").map_err(|e| Error::io("<writer>", e))
    };
    for n in g.nodes() {
        let dynamic = !n.id.is_static();
        emit(&Line::Node {
            id: (&n.id).into(),
            features: n.features.clone(),
            label: (dynamic || n.label.is_some()).then_some(n.label),
            mask: (dynamic || n.mask).then_some(n.mask),
        })?;
    }
    for e in g.edges() {
        emit(&Line::Edge {
            family: e.family,
            src: (&e.src).into(),
            dst: (&e.dst).into(),
            relation: e.relation.clone(),
        })?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))
}

pub fn read_jsonl<R: Read>(r: R) -> Result<FullHistoryGraph> {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (k, line) in BufReader::new(r).lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let parsed: Line = serde_json::from_value(value).map_err(|e| Error::Schema {
            line: lineno,
            msg: e.to_string(),
        })?;
        match parsed {
            Line::Node {
                id,
                features,
                label,
                mask,
            } => nodes.push(NodeRecord {
                id: id.into(),
                features,
                label: label.flatten(),
                mask: mask.unwrap_or(false),
            }),
            Line::Edge {
                family,
                src,
                dst,
                relation,
            } => edges.push(Edge {
                src: src.into(),
                dst: dst.into(),
                family,
                relation,
            }),
        }
    }
    FullHistoryGraph::build(nodes, edges)
}

pub fn save_jsonl(g: &FullHistoryGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_jsonl(g, BufWriter::new(file))
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<FullHistoryGraph> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(file)
}
