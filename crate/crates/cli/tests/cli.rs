use std::path::Path;
use std::process::{Command, Output};

use cmtad_cli::RunConfig;

fn cmtad(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cmtad"));
    c.args(args).env_remove("CMTAD_OUT");
    if let Some(p) = env_out {
        c.env("CMTAD_OUT", p);
    }
    c.output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = cmtad(args, None);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

const SPEC: &str = "n_nes = 5\nt = 336\nk = 3\nseed = 7\n\n[random_anomalies]\ncount = 6\nmagnitude_sigma = 8.0\nplacement = [0.8, 0.99]\nmax_features = 1\n";

fn tiny_config(dir: &Path, data: &Path) -> std::path::PathBuf {
    let text = format!(
        r#"preset = "ran"
seeds = [1]

[data]
csv = "{d}/data.csv"
schema = "{d}/schema.toml"
labels = "{d}/labels.csv"

[model]
l = 12
h = 2
kernel_size = 3
gru_hidden = 8
forecast_layers = 1
forecast_hidden = 8
recon_hidden = 8
embed_dim = 2
dropout = 0.0
lr = 0.003

[train]
stride = 4
batch_size = 16
epochs = 2

[evaluation]
random_seeds = [0]
"#,
        d = data.display()
    );
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn synth(dir: &Path) -> std::path::PathBuf {
    let spec = dir.join("spec.toml");
    std::fs::write(&spec, SPEC).unwrap();
    let data = dir.join("data");
    ok(&["synth", "--spec", spec.to_str().unwrap(), "--out", data.to_str().unwrap(), "--quiet"]);
    data
}

#[test]
fn staged_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    for f in ["data.csv", "labels.csv", "schema.toml", "injections.json", "config.toml"] {
        assert!(data.join(f).exists(), "{f}");
    }
    let cfg = tiny_config(dir.path(), &data);
    let out = dir.path().join("run");
    let (c, o) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    for cmd in ["train", "calibrate", "score", "evaluate", "report"] {
        ok(&[cmd, "--config", c, "--out", o, "--quiet"]);
    }
    for f in [
        "config.toml",
        "config.resolved.toml",
        "checkpoint.bin",
        "train_log.csv",
        "thresholds.csv",
        "bins.json",
        "residuals.csv",
        "decisions.csv",
        "metrics.json",
        "metrics.txt",
        "alerts.csv",
        "plot.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(out.join("config.toml")).unwrap(), std::fs::read_to_string(&cfg).unwrap());
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["random"].as_array().unwrap().len(), 1);
    assert_eq!(m["model"]["features"].as_array().unwrap().len(), 3);

    // same inputs and seed reproduce the primary outputs byte for byte
    let again = dir.path().join("again");
    let a = again.to_str().unwrap();
    for cmd in ["train", "calibrate", "score"] {
        ok(&[cmd, "--config", c, "--out", a, "--quiet"]);
    }
    for f in ["checkpoint.bin", "thresholds.csv", "residuals.csv", "decisions.csv"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn ablate_reports_two_variants_by_five_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let cfg = tiny_config(dir.path(), &data);
    let out = dir.path().join("abl");
    ok(&[
        "ablate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--axis",
        "gat_version",
        "--seeds",
        "1,2,3,4,5",
        "--quiet",
    ]);
    let r: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("ablation_gat_version.json")).unwrap()).unwrap();
    assert_eq!(r["rows"].as_array().unwrap().len(), 10);
    assert_eq!(r["summary"].as_array().unwrap().len(), 2);
    let diffs = r["diffs"].as_array().unwrap();
    assert_eq!(diffs.len(), 1);
    assert_eq!(diffs[0]["per_seed_total"].as_array().unwrap().len(), 5);
    assert_eq!(r["jaccard"].as_array().unwrap().len(), 5);
    assert!(out.join("config.resolved.toml").exists());
}

#[test]
fn telco_preset_applies_table_values() {
    let text = "preset = \"telco\"\n[data]\ncsv = \"d.csv\"\nschema = \"s.toml\"\n";
    let c = RunConfig::resolve(text, None, Path::new(".")).unwrap();
    assert_eq!(
        (c.model.l, c.model.h, c.train.stride, c.train.batch_size, c.train.epochs),
        (577, 257, 31, 30, 150)
    );
}

#[test]
fn failures_emit_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let o = cmtad(&["train", "--config", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(v["error"]["kind"], "config");

    let o = cmtad(&["train", "--bogus"], None);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(v["error"]["kind"], "usage");
}

#[test]
fn env_var_sets_default_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, SPEC).unwrap();
    let root = dir.path().join("envroot");
    let o = cmtad(&["synth", "--spec", spec.to_str().unwrap(), "--quiet"], Some(&root));
    assert!(o.status.success());
    assert!(root.join("data.csv").exists());
}
