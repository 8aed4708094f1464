use std::io::Write;

use etdnet::{EvalMetrics, Mode, TrainConfig};

use super::train::{monitor_name, prepare, train_run};
use crate::config::read_config_file;
use crate::{AblateArgs, CliResult};

struct Row {
    mode: Mode,
    lr: f64,
    weight_decay: f64,
    best_epoch: usize,
    best_metric: f64,
    val: EvalMetrics,
}

pub fn run(a: AblateArgs, argv: &[String], out: &mut dyn Write) -> CliResult<()> {
    let file = read_config_file(a.config.as_deref())?;
    let (base, units) = prepare(&file, &a.data, &a.model, &a.train)?;
    let modes: Vec<Mode> = if a.modes.is_empty() {
        Mode::ALL.to_vec()
    } else {
        a.modes.iter().map(|s| s.parse()).collect::<Result<_, _>>()?
    };
    let lrs = if a.lr_grid.is_empty() { vec![base.train.lr] } else { a.lr_grid.clone() };
    let wds = if a.wd_grid.is_empty() { vec![base.train.weight_decay] } else { a.wd_grid.clone() };
    let grid = lrs.len() * wds.len() > 1;

    let mut rows = Vec::new();
    for &mode in &modes {
        let mut best: Option<Row> = None;
        for &lr in &lrs {
            for &weight_decay in &wds {
                let mut rc = base.clone();
                rc.model.mode = mode;
                rc.train = TrainConfig { lr, weight_decay, ..base.train.clone() };
                let dir = if grid {
                    a.out.join(mode.name()).join(format!("lr{lr}_wd{weight_decay}"))
                } else {
                    a.out.join(mode.name())
                };
                writeln!(out, "# {mode} lr={lr} weight_decay={weight_decay}")?;
                let (outcome, _) = train_run(&rc, &units, &dir, "ablate", argv, out)?;
                let row = Row {
                    mode,
                    lr,
                    weight_decay,
                    best_epoch: outcome.best_epoch,
                    best_metric: outcome.best_metric,
                    val: outcome.reports[outcome.best_epoch - 1].val.clone(),
                };
                if best.as_ref().is_none_or(|b| row.best_metric > b.best_metric) {
                    best = Some(row);
                }
            }
        }
        rows.extend(best);
    }

    let cols: Vec<&str> = EvalMetrics::default().columns().into_iter().map(|c| c.0).collect();
    let mut csv = format!("mode,lr,weight_decay,best_epoch,{},{}\n", monitor_name(base.train.monitor), cols.join(","));
    for r in &rows {
        let vals: Vec<String> = r.val.columns().into_iter().map(|c| c.1.map_or_else(String::new, |v| v.to_string())).collect();
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.mode, r.lr, r.weight_decay, r.best_epoch, r.best_metric, vals.join(",")
        ));
    }
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("ablation.csv"), &csv)?;
    out.write_all(csv.as_bytes())?;
    Ok(())
}
