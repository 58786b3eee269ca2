use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn grapal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grapal")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"
seeds = [0, 1, 2]
[dataset.synthetic]
kind = "nc"
nodes_per_class = 15
separability = 3.0
[scenario]
setting = "class-il"
[model]
hidden = 8
layers = 2
max_epochs = 15
lr = 1e-2
"#;

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, body).unwrap();
    p
}

fn run_report(dir: &Path, body: &str, extra: &[&str]) -> (Output, Value) {
    let cfg = write_config(dir, body);
    let out = dir.join("report.json");
    let mut args = vec!["run", path(&cfg), "--out", path(&out)];
    args.extend(extra);
    let o = grapal(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (o, serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap())
}

#[test]
fn two_methods_three_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{SMALL}\n[[method]]\nname = \"bare\"\n[[method]]\nname = \"ewc\"\nlambda = 100.0\n");
    let (o, r) = run_report(dir.path(), &body, &[]);
    let runs = r["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 6);
    assert!(runs.iter().all(|x| x["status"] == "ok"));
    let aggs = r["aggregates"].as_array().unwrap();
    assert_eq!(aggs.len(), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("report written"));

    // aggregates are recomputable from the embedded per-run values
    for a in aggs {
        let mine: Vec<f64> = runs
            .iter()
            .filter(|x| x["method"] == a["method"])
            .map(|x| x["report"]["final"]["AP"].as_f64().unwrap())
            .collect();
        let n = mine.len() as f64;
        let mean = mine.iter().sum::<f64>() / n;
        let std = (mine.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((a["AP"]["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
        assert!((a["AP"]["std"].as_f64().unwrap() - std).abs() < 1e-12);
        assert_eq!(a["ap_curve"].as_array().unwrap().len(), 3);
    }
    // every run embeds its resolved config; INT is filled, FWT is not (Class-IL)
    let first = &runs[0]["report"];
    assert_eq!(first["config"]["seed"], 0);
    assert_eq!(first["config"]["resolved"]["groups"], serde_json::json!([[0, 1], [2, 3], [4, 5]]));
    assert!(first["final"]["INT"].is_f64());
    assert!(first["final"]["FWT"].is_null());
    assert_eq!(r["selected"].as_array().unwrap().len(), 2);
}

#[test]
fn seed_offset_and_metric_flags() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{SMALL}\n[[method]]\nname = \"bare\"\n");
    let (_, r) = run_report(dir.path(), &body, &["--seed-offset", "10", "--metric", "accuracy"]);
    let seeds: Vec<u64> = r["runs"].as_array().unwrap().iter().map(|x| x["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, [10, 11, 12]);
    assert_eq!(r["runs"][0]["report"]["metric"], "accuracy");

    // ranking metrics do not apply to class answers
    let cfg = dir.path().join("run.toml");
    let o = grapal(&["run", path(&cfg), "--metric", "hits@5"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("hits@5"));
}

#[test]
fn grid_selection_by_validation() {
    let dir = tempfile::tempdir().unwrap();
    let body =
        format!("{SMALL}\n[[method]]\nname = \"lwf\"\nlambda = [0.1, 1.0]\n").replace("lr = 1e-2", "lr = [1e-2, 1e-3]");
    let (_, r) = run_report(dir.path(), &body, &[]);
    let aggs = r["aggregates"].as_array().unwrap();
    assert_eq!(aggs.len(), 4);
    let best = aggs
        .iter()
        .max_by(|a, b| a["val_ap"]["mean"].as_f64().partial_cmp(&b["val_ap"]["mean"].as_f64()).unwrap())
        .unwrap();
    assert_eq!(r["selected"][0]["grid"], best["grid"]);
    assert!(r["selected"][0]["params"]["lambda"].is_f64());
}

#[test]
fn config_and_io_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = SMALL.replace(
        "[dataset.synthetic]\nkind = \"nc\"\nnodes_per_class = 15\nseparability = 3.0",
        "[dataset]\npath = \"absent\"\nlevel = \"nc\"",
    ) + "[[method]]\nname = \"bare\"\n";
    let cfg = write_config(dir.path(), &missing);
    let o = grapal(&["run", path(&cfg)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent"));

    let cfg =
        write_config(dir.path(), &(SMALL.replace("seeds = [0, 1, 2]", "seeds = []") + "[[method]]\nname = \"bare\"\n"));
    assert!(!grapal(&["run", path(&cfg)]).status.success());
    assert!(!grapal(&["run", path(&dir.path().join("nope.toml"))]).status.success());

    let cfg = write_config(dir.path(), &format!("{SMALL}\n[[method]]\nname = \"bare\"\n"));
    let o = Command::new(env!("CARGO_BIN_EXE_grapal"))
        .args(["run", path(&cfg)])
        .env("GRAPAL_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!o.status.success());
}

#[test]
fn divergent_runs_are_marked_failed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("nc.toml");
    fs::write(&spec, "nodes_per_class = 10\nfeature_dim = 4\n").unwrap();
    let data = dir.path().join("data");
    assert!(grapal(&["gen", path(&spec), "--out", path(&data)]).status.success());
    let feats = fs::read_to_string(data.join("node_features.csv")).unwrap();
    let mut lines: Vec<String> = feats.lines().map(String::from).collect();
    let cut = lines[1].rfind(',').unwrap();
    lines[1] = format!("{},inf", &lines[1][..cut]);
    fs::write(data.join("node_features.csv"), lines.join("\n") + "\n").unwrap();

    let body = "seeds = [0]\n[dataset]\npath = \"data\"\nlevel = \"nc\"\n[scenario]\nsetting = \"task-il\"\n[model]\nhidden = 4\nlayers = 1\nmax_epochs = 3\n[[method]]\nname = \"bare\"\n";
    let cfg = write_config(dir.path(), body);
    let o = grapal(&["run", path(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    let r: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run.report.json")).unwrap()).unwrap();
    assert_eq!(r["runs"][0]["status"], "failed");
    assert!(r["runs"][0]["error"].as_str().unwrap().contains("NaN"));
    assert_eq!(r["aggregates"][0]["failed"], 1);
}

#[test]
fn remapped_ids_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    let mut edges = String::from("src,dst\n");
    let mut labels = String::from("node_id,label\n");
    for i in 0..40 {
        edges += &format!("n{i},n{}\n", (i + 1) % 40);
        labels += &format!("n{i},{}\n", i % 4);
    }
    fs::write(data.join("edges.csv"), edges).unwrap();
    fs::write(data.join("node_labels.csv"), labels).unwrap();
    let body = "seeds = [0]\n[dataset]\npath = \"data\"\nlevel = \"nc\"\nfeatures = \"degree\"\n[scenario]\nsetting = \"task-il\"\n[model]\nhidden = 4\nlayers = 1\nmax_epochs = 3\n[[method]]\nname = \"bare\"\n";
    let (_, r) = run_report(dir.path(), body, &[]);
    let ids = r["ids"].as_array().unwrap();
    assert_eq!(ids.len(), 40);
    assert_eq!(ids[0], "n0");
    assert_eq!(r["scenario"]["groups"], serde_json::json!([[0, 1], [2, 3]]));
}

#[test]
fn gen_is_deterministic_and_checked() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, "kind = \"nc\"\nn_tasks = 3\nclasses_per_task = 2\nnodes_per_class = 8\nseed = 5\n").unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(grapal(&["gen", path(&spec), "--out", path(&a)]).status.success());
    assert!(grapal(&["gen", path(&spec), "--out", path(&b)]).status.success());
    for f in ["edges.csv", "node_features.csv", "node_labels.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let labels: BTreeSet<String> = fs::read_to_string(a.join("node_labels.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().to_string())
        .collect();
    assert_eq!(labels.len(), 6);

    fs::write(&spec, "nodes_per_class = 0\n").unwrap();
    assert!(!grapal(&["gen", path(&spec), "--out", path(&dir.path().join("c"))]).status.success());
    fs::write(&spec, "colour = 3\n").unwrap();
    assert!(!grapal(&["gen", path(&spec)]).status.success());
}

#[test]
fn validate_reports_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, "nodes_per_class = 5\n").unwrap();
    let data = dir.path().join("d");
    assert!(grapal(&["gen", path(&spec), "--out", path(&data)]).status.success());
    let o = grapal(&["validate", path(&data), "--setting", "domain-il"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout), "ok\n");

    fs::write(data.join("node_labels.csv"), "node_id,label\n0,1\n").unwrap();
    let mut edges = fs::read_to_string(data.join("edges.csv")).unwrap();
    edges += "0,999,0,0\n";
    let line = edges.lines().count();
    fs::write(data.join("edges.csv"), edges).unwrap();
    let o = grapal(&["validate", path(&data), "--setting", "domain-il"]);
    assert!(o.status.success(), "diagnostics never fail the command");
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("missing domain column"), "{text}");
    assert!(text.contains(&format!("edges.csv:{line}: dangling node id \"999\"")), "{text}");
}
