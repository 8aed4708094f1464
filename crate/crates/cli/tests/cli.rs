use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use etdnet::fhgraph::save_jsonl;
use etdnet::synthdata::{random_graph, LabelKind, RandomGraphSpec};
use etdnet_cli::exit;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_etdnet"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/micro")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const MICRO: &[&str] = &["--d", "8", "--sa-heads", "2", "--ha-heads", "2", "--dropout", "0", "--lr", "1e-2"];

fn train_micro(out: &Path, extra: &[&str]) -> String {
    let fix = fixture();
    let mut args = vec!["train", "--data", s(&fix), "--out", s(out)];
    args.extend_from_slice(MICRO);
    args.extend_from_slice(extra);
    ok(&args)
}

fn csv_losses(path: &Path) -> Vec<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn generate_prints_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["generate", "traffic", "--vehicles", "1", "--timesteps", "3", "--out", s(dir.path())]);
    assert_eq!(out.trim(), "nodes=3 intra=0 inter=2");
    assert!(dir.path().join("graph.jsonl").is_file());
    assert!(dir.path().join("metadata.json").is_file());
}

#[test]
fn ledger_without_illicit_marks_auc_undefined() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["generate", "ledger", "--illicit", "0", "--months", "3", "--tx-per-month", "30", "--out", s(dir.path())]);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["auc_defined"], serde_json::json!(false));
}

#[test]
fn generate_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        ok(&["generate", "traffic", "--vehicles", "6", "--seed", "9", "--scenes", "2", "--out", s(d.path())]);
    }
    for f in ["scene_000/graph.jsonl", "scene_001/metadata.json", "scene_001/graph.jsonl"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_ne!(
        std::fs::read(a.path().join("scene_000/graph.jsonl")).unwrap(),
        std::fs::read(a.path().join("scene_001/graph.jsonl")).unwrap()
    );
}

#[test]
fn generator_config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    std::fs::write(&cfg, r#"{"n_vehicles": 4, "n_timesteps": 5, "n_static": 0}"#).unwrap();
    let out = ok(&["generate", "traffic", "--config", s(&cfg), "--timesteps", "2", "--out", s(&dir.path().join("g"))]);
    assert!(out.starts_with("nodes=8 "), "{out}");
}

#[test]
fn micro_fixture_trains_to_a_small_loss() {
    let dir = tempfile::tempdir().unwrap();
    train_micro(dir.path(), &["--max-epochs", "200", "--patience", "200"]);
    let losses = csv_losses(&dir.path().join("metrics.csv"));
    assert_eq!(losses.len(), 200);
    assert!(losses[199] < 0.05 * losses[0], "{} vs {}", losses[199], losses[0]);
    for f in ["timings.csv", "checkpoint.json", "manifest.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }

    let fix = fixture();
    let ckpt = dir.path().join("checkpoint.json");
    let eval = ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&fix)]);
    assert!(eval.lines().any(|l| l == "macro_f1=1"), "{eval}");
}

#[test]
fn one_epoch_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    train_micro(dir.path(), &["--max-epochs", "1"]);
    let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("epoch,loss,val_loss,macro_f1,"));
}

#[test]
fn only_sa_matches_full_without_inter_edges() {
    let dir = tempfile::tempdir().unwrap();
    let spec = RandomGraphSpec {
        entities: 5,
        self_chain_prob: 0.0,
        cross_prob: 0.0,
        labels: LabelKind::Binary,
        ..RandomGraphSpec::small()
    };
    let g = random_graph(&spec, 3).unwrap();
    assert!(g.inter_edges().is_empty());
    let data = dir.path().join("graph.jsonl");
    save_jsonl(&g, &data).unwrap();
    let mut csvs = Vec::new();
    for mode in ["full", "only-sa"] {
        let out = dir.path().join(mode);
        let mut args = vec!["train", "--data", s(&data), "--out", s(&out), "--mode", mode, "--max-epochs", "5"];
        args.extend_from_slice(MICRO);
        ok(&args);
        csvs.push(std::fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn manifest_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    train_micro(&first, &["--max-epochs", "12", "--seed", "5"]);
    let manifest = first.join("manifest.json");
    let second = dir.path().join("second");
    ok(&["train", "--config", s(&manifest), "--out", s(&second)]);
    for f in ["metrics.csv", "checkpoint.json"] {
        assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(second.join(f)).unwrap(), "{f}");
    }
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["train"]["seed"], serde_json::json!(5));
    assert_eq!(m["model"]["d"], serde_json::json!(8));
    assert_eq!(m["model"]["L"], serde_json::json!(2));
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"model": {"d": 12, "H_s": 3, "B": 2}, "train": {"patience": 3, "max_epochs": 4}}"#).unwrap();
    let out = dir.path().join("run");
    let fix = fixture();
    ok(&["train", "--config", s(&cfg), "--data", s(&fix), "--out", s(&out), "--max-epochs", "2", "--ha-heads", "3"]);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["model"]["d"], serde_json::json!(12));
    assert_eq!(m["model"]["B"], serde_json::json!(2));
    assert_eq!(m["model"]["H_t"], serde_json::json!(3));
    assert_eq!(m["train"]["patience"], serde_json::json!(3));
    assert_eq!(m["train"]["max_epochs"], serde_json::json!(2));
    assert_eq!(m["train"]["lr"], serde_json::json!(1e-3));
}

#[test]
fn unknown_config_fields_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"model": {"depth": 4}}"#).unwrap();
    let fix = fixture();
    let o = run(&["train", "--config", s(&cfg), "--data", s(&fix), "--out", s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(exit::USAGE));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.depth"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let fix = fixture();
    let r = dir.path().join("r");
    assert_eq!(run(&["train"]).status.code(), Some(exit::USAGE));
    let bad_mode = run(&["train", "--data", s(&fix), "--out", s(&r), "--mode", "sideways"]);
    assert_eq!(bad_mode.status.code(), Some(exit::USAGE));
    assert!(String::from_utf8_lossy(&bad_mode.stderr).contains("mode"));
    let bad_heads = run(&["train", "--data", s(&fix), "--out", s(&r), "--d", "10", "--sa-heads", "3"]);
    assert_eq!(bad_heads.status.code(), Some(exit::USAGE));

    let mut args = vec!["train", "--data", s(&fix), "--out", s(&r), "--max-epochs", "3"];
    args.extend_from_slice(&MICRO[..8]);
    args.extend_from_slice(&["--lr", "1e308"]);
    let nan = run(&args);
    assert_eq!(nan.status.code(), Some(exit::NUMERIC), "{}", String::from_utf8_lossy(&nan.stderr));
    assert!(String::from_utf8_lossy(&nan.stderr).contains("epoch"));

    train_micro(&r, &["--max-epochs", "1"]);
    let traffic = dir.path().join("traffic");
    ok(&["generate", "traffic", "--vehicles", "2", "--timesteps", "3", "--out", s(&traffic)]);
    let ckpt = r.join("checkpoint.json");
    let mismatch = run(&["eval", "--checkpoint", s(&ckpt), "--data", s(&traffic)]);
    assert_eq!(mismatch.status.code(), Some(exit::SCHEMA));

    let broken = dir.path().join("broken.jsonl");
    std::fs::write(&broken, "{\"kind\": \"node\"\n").unwrap();
    assert_eq!(run(&["validate", "--data", s(&broken)]).status.code(), Some(exit::SCHEMA));
}

#[test]
fn gradcheck_default_passes() {
    let o = run(&["gradcheck"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("worst="));
}

#[test]
fn bench_sa_column_doubles_with_size() {
    let out = ok(&["bench", "--sizes", "1,2,4,8", "--d", "16", "--sa-heads", "2", "--ha-heads", "2"]);
    let mut lines = out.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|&h| h == "sa").unwrap();
    let sa: Vec<u64> = lines.take(4).map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    for w in sa.windows(2) {
        assert_eq!(w[1], 2 * w[0]);
    }
    assert!(out.contains("r2="));
}

#[test]
fn commands_leave_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let fix = fixture().join("graph.jsonl");
    let before = std::fs::read(&fix).unwrap();
    let r = dir.path().join("r");
    train_micro(&r, &["--max-epochs", "2"]);
    let ckpt = r.join("checkpoint.json");
    let ckpt_before = std::fs::read(&ckpt).unwrap();
    ok(&["validate", "--data", s(&fix)]);
    ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&fix)]);
    assert_eq!(std::fs::read(&fix).unwrap(), before);
    assert_eq!(std::fs::read(&ckpt).unwrap(), ckpt_before);
}

#[test]
fn ablate_tabulates_each_mode() {
    let dir = tempfile::tempdir().unwrap();
    let fix = fixture();
    let out = dir.path().join("abl");
    let mut args = vec!["ablate", "--data", s(&fix), "--out", s(&out), "--max-epochs", "3", "--modes", "full,only-sa,ha-meanpool"];
    args.extend_from_slice(MICRO);
    ok(&args);
    let table = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    for m in ["full", "only-sa", "ha-meanpool"] {
        assert!(out.join(m).join("manifest.json").is_file());
        assert!(table.lines().any(|l| l.starts_with(&format!("{m},"))));
    }
}

#[test]
fn in_process_entry_point_reports_usage() {
    let mut out = Vec::new();
    let mut err = Vec::new();
    assert_eq!(etdnet_cli::main_with(["etdnet", "--help"], &mut out, &mut err), exit::OK);
    assert!(String::from_utf8_lossy(&out).contains("gradcheck"));
    assert_eq!(etdnet_cli::main_with(["etdnet", "fly"], &mut out, &mut err), exit::USAGE);
}
