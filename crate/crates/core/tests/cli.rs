mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::tiny_config;

fn disenq(args: &[&str], root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_disenq"));
    cmd.args(args).env_remove("DISENQ_OUTPUT_ROOT");
    if let Some(r) = root {
        cmd.env("DISENQ_OUTPUT_ROOT", r);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, mutate: impl FnOnce(&mut disenq::config::RunConfig)) -> String {
    let mut cfg = tiny_config(21);
    mutate(&mut cfg);
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_train_evaluate_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), |c| {
        c.world.num_identities = 40;
        c.world.num_actions = 4;
        c.training.epochs = 1;
    });
    let data = dir.path().join("data");
    let out = disenq(&["generate", "--config", &config, "--out", s(&data)], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("manifest.json").exists());

    let again = disenq(&["generate", "--config", &config, "--out", s(&data)], None);
    assert_eq!(again.status.code(), Some(2), "non-empty output needs --force");
    let data2 = dir.path().join("data2");
    assert!(disenq(&["generate", "--config", &config, "--out", s(&data2)], None).status.success());
    assert_eq!(std::fs::read(data.join("manifest.json")).unwrap(), std::fs::read(data2.join("manifest.json")).unwrap());

    let run = dir.path().join("run");
    let out = disenq(&["train", "--config", &config, "--data", s(&data), "--out", s(&run)], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    let ckpt = run.join("checkpoint.bin");

    let eval = dir.path().join("eval");
    let out = disenq(&["evaluate", "--ckpt", s(&ckpt), "--data", s(&data), "--out", s(&eval)], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let reports: Vec<_> = std::fs::read_dir(&eval).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(reports.iter().filter(|n| n.starts_with("report_")).count(), 4);
    assert!(!reports.iter().any(|n| n.ends_with(".svg")));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(eval.join("report_same_activity-include_view.json")).unwrap()).unwrap();
    for key in ["protocol", "rank1", "rank5", "rank10", "mAP", "num_probes", "num_skipped", "per_probe"] {
        assert!(report.get(key).is_some(), "{key}");
    }

    let plots = dir.path().join("plots");
    let out = disenq(&["evaluate", "--ckpt", s(&ckpt), "--data", s(&data), "--out", s(&plots), "--plots", "--protocols", "cross_activity-exclude_view"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(plots.join("cmc_cross_activity-exclude_view.svg").exists());
    assert!(plots.join("report_cross_activity-exclude_view.json").exists());

    let diag = dir.path().join("diag");
    let out = disenq(&["diagnose", "--ckpt", s(&ckpt), "--data", s(&data), "--out", s(&diag), "--export"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let d: serde_json::Value = serde_json::from_slice(&std::fs::read(diag.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(d["mutual_information"].as_array().unwrap().len(), 6);
    let (emb, labels) = disenq::diagnostics::read_embeddings(&diag.join("embeddings.f32")).unwrap();
    assert_eq!(emb.len(), 40 * 4 * 2 * 2);
    assert_eq!(labels.len(), emb.len());
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), |_| {});
    let out = disenq(&["generate", "--config", &config], Some(dir.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("data/manifest.json").exists());
    let out = disenq(&["generate", "--config", &config], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(disenq(&["frobnicate"], None).status.code(), Some(1));
    assert_eq!(disenq(&["generate"], None).status.code(), Some(1));
    assert_eq!(disenq(&["--help"], None).status.code(), Some(0));

    let config = write_config(dir.path(), |c| c.world.token_dim = 2);
    let out = disenq(&["generate", "--config", &config, "--out", s(&dir.path().join("x"))], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("token_dim"));

    let missing = dir.path().join("nope.bin");
    let out = disenq(&["diagnose", "--ckpt", s(&missing), "--data", s(dir.path()), "--out", s(dir.path())], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_rejects_text_free_data() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), |_| {});
    let cfg = disenq::config::RunConfig::load(Path::new(&config)).unwrap();
    let mut ds = disenq::world::generate_dataset(&cfg.world).unwrap();
    ds.samples.iter_mut().for_each(|s| s.text = None);
    let data = dir.path().join("data");
    disenq::manifest::write_dataset(&ds, &data).unwrap();
    let out = disenq(&["train", "--config", &config, "--data", s(&data), "--out", s(&dir.path().join("run"))], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("text"));
}
