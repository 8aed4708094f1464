//! Loading graphs from disk and cutting them into training units.

use std::path::{Path, PathBuf};

use etdnet::fhgraph::load_jsonl;
use etdnet::{FullHistoryGraph, Head, Label, LabeledBatch};

use crate::config::DataConfig;
use crate::{CliError, CliResult};

/// Graph files under `path`: the file itself, `path/graph.jsonl`, or every
/// `*.jsonl` and `*/graph.jsonl` below it in sorted order.
pub fn graph_files(path: &Path) -> CliResult<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(CliError::usage(format!("{}: no such file or directory", path.display())));
    }
    let direct = path.join("graph.jsonl");
    if direct.is_file() {
        return Ok(vec![direct]);
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    let mut found = Vec::new();
    for p in entries {
        if p.is_file() && p.extension().is_some_and(|x| x == "jsonl") {
            found.push(p);
        } else if p.join("graph.jsonl").is_file() {
            found.push(p.join("graph.jsonl"));
        }
    }
    if found.is_empty() {
        return Err(CliError::usage(format!("{}: no graph files found", path.display())));
    }
    Ok(found)
}

pub fn load_graphs(paths: &[PathBuf]) -> CliResult<Vec<(PathBuf, FullHistoryGraph)>> {
    let mut out = Vec::new();
    for p in paths {
        for f in graph_files(p)? {
            let g = load_jsonl(&f).map_err(|e| {
                let mut err = CliError::from(e);
                err.message = format!("{}: {}", f.display(), err.message);
                err
            })?;
            out.push((f, g));
        }
    }
    Ok(out)
}

/// Cuts a graph into windows of `steps` timesteps; `0` keeps it whole.
pub fn split_steps(g: FullHistoryGraph, steps: u32) -> CliResult<Vec<FullHistoryGraph>> {
    let Some(last) = g.max_timestep().filter(|_| steps > 0) else {
        return Ok(vec![g]);
    };
    let mut units = Vec::new();
    let mut t0 = 0;
    while t0 <= last {
        units.push(g.time_window(t0, t0 + steps)?);
        t0 += steps;
    }
    Ok(units)
}

/// The head implied by the masked labels, or `None` if nothing is masked.
pub fn infer_head(graphs: &[FullHistoryGraph]) -> CliResult<Option<Head>> {
    let mut head = None;
    for g in graphs {
        for n in g.nodes().iter().filter(|n| n.mask) {
            let h = match n.label {
                Some(Label::Dual { .. }) => Head::dual(),
                Some(Label::Binary { .. }) => Head::Binary,
                None => continue,
            };
            match head {
                None => head = Some(h),
                Some(prev) if prev != h => {
                    return Err(CliError::usage("data: graphs mix dual and binary labels"));
                }
                Some(_) => {}
            }
        }
    }
    Ok(head)
}

pub fn feature_dim(graphs: &[FullHistoryGraph]) -> CliResult<usize> {
    let dims: Vec<usize> = graphs.iter().filter(|g| !g.is_empty()).map(|g| g.feature_dim()).collect();
    match dims.first() {
        None => Err(CliError::usage("data: every graph is empty")),
        Some(&d) if dims.iter().all(|&x| x == d) => Ok(d),
        Some(_) => Err(CliError::usage("data: graphs disagree on feature_dim")),
    }
}

/// Training and validation units before batching.
#[derive(Debug, Clone)]
pub struct Units {
    pub train: Vec<FullHistoryGraph>,
    pub val: Vec<FullHistoryGraph>,
    /// True when the only training unit doubles as the validation set.
    pub val_is_train: bool,
}

impl Units {
    pub fn load(cfg: &DataConfig) -> CliResult<Self> {
        cfg.validate()?;
        let mut train = Vec::new();
        for (_, g) in load_graphs(&cfg.train)? {
            train.extend(split_steps(g, cfg.unit_steps)?);
        }
        let mut val = Vec::new();
        for (_, g) in load_graphs(&cfg.val)? {
            val.extend(split_steps(g, cfg.unit_steps)?);
        }
        let mut val_is_train = false;
        if val.is_empty() {
            if train.len() == 1 {
                val = train.clone();
                val_is_train = true;
            } else {
                let k = ((train.len() as f64 * cfg.val_fraction).ceil() as usize).clamp(1, train.len() - 1);
                val = train.split_off(train.len() - k);
            }
        }
        Ok(Units { train, val, val_is_train })
    }

    pub fn all(&self) -> impl Iterator<Item = &FullHistoryGraph> {
        self.train.iter().chain(&self.val)
    }
}

pub fn batches(graphs: &[FullHistoryGraph], window: usize) -> CliResult<Vec<LabeledBatch>> {
    graphs
        .iter()
        .map(|g| LabeledBatch::new(g.clone(), window).map_err(CliError::from))
        .collect()
}
