use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use etdnet::etdnet::save_checkpoint;
use etdnet::training::{save_reports, train_with, Monitor, TrainOutcome};
use etdnet::{EtdnetParams, Head, ModelConfig};
use serde_json::{json, Map, Value};

use crate::config::{cli_model_defaults, cli_train_defaults, layered, read_config_file, section, DataConfig, RunConfig};
use crate::data::{batches, feature_dim, infer_head, Units};
use crate::manifest::{now_ms, RunManifest};
use crate::{CliError, CliResult, DataArgs, ModelFlags, TrainArgs, TrainFlags};

pub fn run(a: TrainArgs, argv: &[String], out: &mut dyn Write) -> CliResult<()> {
    let file = read_config_file(a.config.as_deref())?;
    let (rc, units) = prepare(&file, &a.data, &a.model, &a.train)?;
    let (outcome, _) = train_run(&rc, &units, &a.out, "train", argv, out)?;
    let best = &outcome.reports[outcome.best_epoch - 1];
    writeln!(
        out,
        "best_epoch={} {}={} epochs={}",
        outcome.best_epoch,
        monitor_name(rc.train.monitor),
        best.val.monitor(rc.train.monitor),
        outcome.reports.len()
    )?;
    Ok(())
}

pub(crate) fn monitor_name(m: Monitor) -> String {
    serde_json::to_value(m).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// Resolves the effective configuration and loads the data it names.
/// `d_in` and the head default to what the data implies.
pub(crate) fn prepare(
    file: &Map<String, Value>,
    data: &DataArgs,
    model: &ModelFlags,
    train: &TrainFlags,
) -> CliResult<(RunConfig, Units)> {
    let data_flags = DataConfig::flags_to_json(data);
    let data_cfg: DataConfig = layered("data", &DataConfig::default(), &[section(file, "data")?, Some(&data_flags)])?;
    let units = Units::load(&data_cfg)?;
    let graphs: Vec<_> = units.all().cloned().collect();
    let head = infer_head(&graphs)?.unwrap_or(Head::dual());

    let model_defaults = ModelConfig {
        d_in: feature_dim(&graphs)?,
        head,
        ..cli_model_defaults()
    };
    let model_flags = model.to_json()?;
    let model_cfg: ModelConfig = layered("model", &model_defaults, &[section(file, "model")?, Some(&model_flags)])?;
    model_cfg.validate()?;
    if model_cfg.d_in != model_defaults.d_in {
        return Err(CliError::usage(format!(
            "model.d_in: {} does not match the data's feature_dim {}",
            model_cfg.d_in, model_defaults.d_in
        )));
    }

    let train_flags = train.to_json()?;
    let train_cfg = layered(
        "train",
        &cli_train_defaults(model_cfg.head),
        &[section(file, "train")?, Some(&train_flags)],
    )?;
    train_cfg.validate()?;
    Ok((
        RunConfig {
            model: model_cfg,
            train: train_cfg,
            data: data_cfg,
        },
        units,
    ))
}

/// Trains into `dir`: metrics.csv, timings.csv, checkpoint.json and
/// manifest.json.
pub(crate) fn train_run(
    rc: &RunConfig,
    units: &Units,
    dir: &Path,
    command: &str,
    argv: &[String],
    out: &mut dyn Write,
) -> CliResult<(TrainOutcome, RunManifest)> {
    let started = now_ms();
    std::fs::create_dir_all(dir)?;
    let train_set = batches(&units.train, rc.model.window)?;
    let val_set = batches(&units.val, rc.model.window)?;
    let init = EtdnetParams::init(&rc.model, rc.train.seed)?;
    let mut io_err = None;
    let outcome = train_with(&rc.model, init, &train_set, &val_set, &rc.train, |r| {
        let res = writeln!(
            out,
            "epoch={} loss={:.6} val_{}={:.4}",
            r.epoch,
            r.train_loss,
            monitor_name(rc.train.monitor),
            r.val.monitor(rc.train.monitor)
        );
        if let Err(e) = res {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    save_reports(dir, &outcome.reports)?;
    save_checkpoint(dir.join("checkpoint.json"), &rc.model, &outcome.best_params)?;

    let best = &outcome.reports[outcome.best_epoch - 1];
    let artifacts: BTreeMap<String, String> = [
        ("metrics", "metrics.csv"),
        ("timings", "timings.csv"),
        ("checkpoint", "checkpoint.json"),
        ("manifest", "manifest.json"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), dir.join(v).display().to_string()))
    .collect();
    let manifest = RunManifest {
        tool: "etdnet".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        argv: argv.to_vec(),
        model: rc.model.clone(),
        train: rc.train.clone(),
        data: rc.data.clone(),
        seed: rc.train.seed,
        artifacts,
        results: json!({
            "best_epoch": outcome.best_epoch,
            "best_metric": outcome.best_metric,
            "epochs": outcome.reports.len(),
            "threshold": best.val.threshold,
            "train_units": units.train.len(),
            "val_units": units.val.len(),
            "val_is_train": units.val_is_train,
        }),
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
    };
    manifest.write(dir)?;
    Ok((outcome, manifest))
}
