use std::io::Write;
use std::path::{Path, PathBuf};

use etdnet::synthdata::{gen_ledger, gen_traffic, micro_task, write_scenario, GeneratorMetadata, LedgerScenarioConfig, TrafficScenarioConfig};
use serde_json::{json, Map, Value};

use super::counts_line;
use crate::config::{is_set, layered, read_config_file};
use crate::{CliResult, GenerateArgs, LedgerArgs, Scenario, ScenesArgs, TrafficArgs};

pub fn run(a: GenerateArgs, out: &mut dyn Write) -> CliResult<()> {
    match a.scenario {
        Scenario::Traffic(t) => traffic(t, out),
        Scenario::Ledger(l) => ledger(l, out),
        Scenario::Micro(o) => {
            let g = micro_task();
            let meta = GeneratorMetadata::new(
                "micro",
                json!({}),
                json!({"label": "binary = first feature > 0"}),
                &g,
                Some(true),
            );
            write_scenario(&o.out, &g, &meta)?;
            counts_line(out, "", &g)
        }
    }
}

fn insert<T: serde::Serialize>(m: &mut Map<String, Value>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        m.insert(key.into(), json!(v));
    }
}

fn scene_dir(c: &ScenesArgs, k: usize) -> PathBuf {
    if c.scenes == 1 {
        c.out.clone()
    } else {
        c.out.join(format!("scene_{k:03}"))
    }
}

fn prefix(c: &ScenesArgs, dir: &Path) -> String {
    if c.scenes == 1 {
        String::new()
    } else {
        format!("{} ", dir.file_name().map_or_else(String::new, |s| s.to_string_lossy().into_owned()))
    }
}

fn traffic(a: TrafficArgs, out: &mut dyn Write) -> CliResult<()> {
    let file = read_config_file(a.common.config.as_deref())?;
    let mut flags = Map::new();
    insert(&mut flags, "n_vehicles", a.vehicles);
    insert(&mut flags, "n_static", a.statics);
    insert(&mut flags, "n_timesteps", a.timesteps);
    insert(&mut flags, "interaction_radius", a.radius);
    insert(&mut flags, "feature_dim", a.feature_dim);
    insert(&mut flags, "arena", a.arena);
    insert(&mut flags, "seed", a.common.seed);
    let layers = [Some(&file), Some(&flags)];
    let mut cfg: TrafficScenarioConfig = layered("traffic", &TrafficScenarioConfig::default(), &layers)?;
    if !is_set("n_static", &layers) {
        cfg.n_static = cfg.n_vehicles * 3 / 5;
    }
    for k in 0..a.common.scenes {
        let scene_cfg = TrafficScenarioConfig {
            seed: cfg.seed + k as u64,
            ..cfg.clone()
        };
        let s = gen_traffic(&scene_cfg)?;
        let dir = scene_dir(&a.common, k);
        write_scenario(&dir, &s.graph, &s.metadata)?;
        counts_line(out, &prefix(&a.common, &dir), &s.graph)?;
    }
    Ok(())
}

fn ledger(a: LedgerArgs, out: &mut dyn Write) -> CliResult<()> {
    let file = read_config_file(a.common.config.as_deref())?;
    let mut flags = Map::new();
    insert(&mut flags, "n_months", a.months);
    insert(&mut flags, "transactions_per_month", a.tx_per_month);
    insert(&mut flags, "illicit_fraction", a.illicit);
    insert(&mut flags, "unknown_fraction", a.unknown);
    insert(&mut flags, "fan_in_max", a.fan_in_max);
    insert(&mut flags, "feature_dim", a.feature_dim);
    insert(&mut flags, "addresses_per_tx", a.addresses);
    insert(&mut flags, "chain_hops", a.chain_hops);
    insert(&mut flags, "seed", a.common.seed);
    let cfg: LedgerScenarioConfig = layered("ledger", &LedgerScenarioConfig::default(), &[Some(&file), Some(&flags)])?;
    for k in 0..a.common.scenes {
        let scene_cfg = LedgerScenarioConfig {
            seed: cfg.seed + k as u64,
            ..cfg.clone()
        };
        let s = gen_ledger(&scene_cfg)?;
        let dir = scene_dir(&a.common, k);
        write_scenario(&dir, &s.graph, &s.metadata)?;
        counts_line(out, &prefix(&a.common, &dir), &s.graph)?;
    }
    Ok(())
}
