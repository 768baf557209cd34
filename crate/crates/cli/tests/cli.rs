use std::path::Path;
use std::process::{Command, Output};

use cocoa_core::checkpoint::load_encoder;
use cocoa_core::io::{read_dataset, read_embeddings};
use cocoa_core::pipeline::{read_jsonl, RunMetrics};

fn cocoa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cocoa"))
        .args(args)
        .env_remove("COCOA_DATA_DIR")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cocoa(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_synth(dir: &Path, seed: &str) -> String {
    let data = dir.join("data");
    let data = data.to_str().unwrap().to_string();
    ok(&["synth", "--out", &data, "--seed", seed, "--window", "32", "--windows-per-class", "30"]);
    data
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (da, db) = (small_synth(a.path(), "7"), small_synth(b.path(), "7"));
    let (x, y) = (read_dataset(Path::new(&da)).unwrap(), read_dataset(Path::new(&db)).unwrap());
    assert_eq!(x.content_hash(), y.content_hash());
    assert_eq!(x.len(), 120);
}

#[test]
fn pretrain_writes_checkpoint_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "1");
    let (ckpt, metrics) = (path(dir.path(), "ckpt"), path(dir.path(), "runs/m.jsonl"));
    ok(&[
        "pretrain", "--method", "cocoa", "--data", &data, "--batch", "16", "--epochs", "2", "--out", &ckpt,
        "--metrics", &metrics,
    ]);
    let (params, _) = load_encoder(&dir.path().join("ckpt/encoder.ckpt")).unwrap();
    let rows: Vec<RunMetrics> = read_jsonl(Path::new(&metrics)).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.stage == "pretrain" && r.method == "cocoa"));
    let run: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ckpt/run.json")).unwrap()).unwrap();
    assert_eq!(run["encoder_hash"], params.hash());
    assert_eq!(run["config"]["batch_size"], 16);
}

#[test]
fn probe_finetune_and_export_use_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "2");
    let ckpt = path(dir.path(), "ckpt");
    ok(&["pretrain", "--data", &data, "--batch", "8", "--epochs", "1", "--out", &ckpt]);
    let enc = path(dir.path(), "ckpt/encoder.ckpt");

    let report = path(dir.path(), "probe.json");
    let text = ok(&["probe", "--data", &data, "--encoder", &enc, "--batch", "8", "--epochs", "2", "--out", &report]);
    assert!(text.contains("macro-F1"));
    let probe: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let (params, _) = load_encoder(Path::new(&enc)).unwrap();
    assert_eq!(probe["encoder_hash"], params.hash());

    let ft = path(dir.path(), "ft");
    ok(&[
        "finetune", "--data", &data, "--encoder", &enc, "--label-fraction", "0.5", "--batch", "8", "--epochs", "1",
        "--out", &ft,
    ]);
    let (_, head) = load_encoder(&dir.path().join("ft/model.ckpt")).unwrap();
    assert!(!head.is_empty());

    let csv = path(dir.path(), "emb/test.csv");
    ok(&["export-embeddings", "--data", &data, "--encoder", &enc, "--split", "test", "--out", &csv]);
    let (emb, labels) = read_embeddings(Path::new(&csv)).unwrap();
    assert_eq!(emb.rows(), 24);
    assert_eq!(labels.unwrap().len(), 24);
}

#[test]
fn data_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "3");
    let out = Command::new(env!("CARGO_BIN_EXE_cocoa"))
        .args(["probe", "--batch", "8", "--epochs", "1"])
        .env("COCOA_DATA_DIR", &data)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bench_reports_nine_rows_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "bench.csv");
    ok(&["bench", "--V", "2,3,4", "--N", "8,64,256", "--repeats", "1", "--out", &out]);
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.iter().filter(|r| r.starts_with("cocoa,")).count(), 9);
    assert_eq!(rows.iter().filter(|r| r.starts_with("cmc,")).count(), 9);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "4");
    let cfg = path(dir.path(), "c.toml");
    std::fs::write(
        &cfg,
        format!("data_dir = {data:?}\n[train]\nbatch_size = 8\nmax_epochs = 3\nmethod = \"infonce\"\n"),
    )
    .unwrap();
    let ckpt = path(dir.path(), "ckpt");
    let metrics = path(dir.path(), "m.jsonl");
    ok(&["--config", &cfg, "pretrain", "--epochs", "1", "--out", &ckpt, "--metrics", &metrics]);
    let rows: Vec<RunMetrics> = read_jsonl(Path::new(&metrics)).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].method, "infonce");

    std::fs::write(&cfg, "[train]\nbatch = 8\n").unwrap();
    assert_eq!(cocoa(&["--config", &cfg, "bench", "--V", "2", "--N", "4"]).status.code(), Some(1));
}

#[test]
fn exit_codes() {
    assert_eq!(cocoa(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(cocoa(&["bench", "--bogus"]).status.code(), Some(1));
    assert_eq!(cocoa(&["bench", "--V", "1"]).status.code(), Some(1));
    assert_eq!(cocoa(&["probe"]).status.code(), Some(1));
    assert_eq!(cocoa(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "5");
    assert_eq!(
        cocoa(&["pretrain", "--data", &data, "--method", "supervised", "--out", &path(dir.path(), "x")])
            .status
            .code(),
        Some(1)
    );
    std::fs::write(dir.path().join("data/labels.u32"), [0u8; 3]).unwrap();
    assert_eq!(cocoa(&["probe", "--data", &data, "--epochs", "1"]).status.code(), Some(2));
}

#[test]
fn help_lists_every_subcommand_and_flag() {
    let top = ok(&["--help"]);
    for sub in ["synth", "pretrain", "probe", "finetune", "label-curve", "batch-sweep", "bench", "export-embeddings"] {
        assert!(top.contains(sub), "{sub}");
    }
    let pre = ok(&["pretrain", "--help"]);
    for flag in ["--method", "--data", "--batch", "--out", "--metrics", "--seed", "--tau", "--lambda", "--config"] {
        assert!(pre.contains(flag), "{flag}");
    }
    assert!(ok(&["batch-sweep", "--help"]).contains("--jobs"));
}

#[test]
fn label_curve_and_batch_sweep_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "6");
    let curve = path(dir.path(), "curve.json");
    ok(&[
        "label-curve", "--data", &data, "--method", "supervised", "--fractions", "0.5,1", "--seeds", "0,1",
        "--batch", "8", "--epochs", "1", "--out", &curve,
    ]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&curve).unwrap()).unwrap();
    assert_eq!(report["points"].as_array().unwrap().len(), 2);
    assert_eq!(report["points"][0]["scores"].as_array().unwrap().len(), 2);

    let sweep = path(dir.path(), "sweep.csv");
    ok(&[
        "batch-sweep", "--data", &data, "--methods", "cocoa,cmc", "--batches", "4,8", "--epochs", "1", "--jobs", "2",
        "--out", &sweep,
    ]);
    let text = std::fs::read_to_string(&sweep).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().next().unwrap().starts_with("method,batch_size,seed,macro_f1"));
}
