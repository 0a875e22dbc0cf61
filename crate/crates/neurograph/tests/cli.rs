use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_neurograph"))
}

fn net(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("nets").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_json(args: &[&str]) -> (i32, Value) {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    let out = run(&full);
    let v = serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout)));
    (out.status.code().unwrap(), v)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn strided_conv_computation_graph_counts() {
    let out = run(&["build-graph", s(&net("conv_2x2_stride2.json")), "--kind", "computation"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("16 edges, 4 parameters"));
    let (code, v) = run_json(&["build-graph", s(&net("conv_2x2_stride2.json")), "--kind", "computation"]);
    assert_eq!(code, 0);
    assert_eq!((v["edges"].as_u64(), v["share_classes"].as_u64()), (Some(16), Some(4)));
}

#[test]
fn two_channel_conv_parameter_graph_has_eight_weight_edges() {
    let (code, v) = run_json(&["build-graph", s(&net("conv_two_channels.json")), "--kind", "param"]);
    assert_eq!(code, 0);
    assert_eq!(v["weight_edges"], 8);
    assert_eq!(v["bias_edges"], 2);
    assert_eq!(v["nodes"], 4);
}

#[test]
fn exports_are_written_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let dot = dir.path().join("g.dot");
    let js = dir.path().join("g.json");
    assert!(run(&["build-graph", s(&net("residual_relu.json")), "--kind", "computation", "--format", "dot", "--out", s(&dot)]).status.success());
    let text = std::fs::read_to_string(&dot).unwrap();
    assert!(text.starts_with("digraph") && text.contains("style=dashed"));
    assert!(run(&["build-graph", s(&net("residual_relu.json")), "--out", s(&js)]).status.success());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&js).unwrap()).unwrap();
    assert!(v["edges"].as_array().unwrap().iter().any(|e| e["param"].is_null()));
}

#[test]
fn input_and_unsupported_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"layers\": 3}").unwrap();
    let out = run(&["build-graph", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    assert_eq!(run(&["build-graph", s(&dir.path().join("missing.json"))]).status.code(), Some(2));

    let norm = dir.path().join("norm.json");
    std::fs::write(
        &norm,
        r#"{"layers": [{"type": "norm", "kind": "layer", "num_features": 3}], "input_shape": [3]}"#,
    )
    .unwrap();
    assert_eq!(run(&["build-graph", s(&norm), "--kind", "computation"]).status.code(), Some(3));
    assert_eq!(run(&["build-graph", s(&norm), "--kind", "param"]).status.code(), Some(0));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn symmetry_reports_match_known_group_orders() {
    let (code, v) = run_json(&["verify-symmetry", s(&net("mlp_2_3_2.json"))]);
    assert_eq!(code, 0);
    assert_eq!(v["group_order"], 6);
    assert!(v["max_deviation"].as_f64().unwrap() < 1e-9);
    assert_eq!(v["generators"].as_array().unwrap().len(), 2);
    assert_eq!(v["config"]["command"], "verify-symmetry");
    assert_eq!(v["config"]["max_autos"], 5040);
    let out = run(&["verify-symmetry", s(&net("linear_only.json"))]);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("config: {"));
    let (code, v) = run_json(&["verify-symmetry", s(&net("linear_only.json"))]);
    assert_eq!((code, v["group_order"].as_u64()), (0, Some(1)));
}

#[test]
fn corrupted_share_class_is_an_invariant_violation() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.json");
    assert!(run(&["build-graph", s(&net("conv_2x2_stride2.json")), "--kind", "computation", "--out", s(&g)]).status.success());
    let (code, v) = run_json(&["verify-symmetry", s(&g)]);
    assert_eq!((code, v["group_order"].as_u64()), (0, Some(1)));
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(&g).unwrap()).unwrap();
    let w = doc["edges"][1]["weight"].as_f64().unwrap();
    doc["edges"][1]["weight"] = Value::from(w + 1.0);
    std::fs::write(&g, doc.to_string()).unwrap();
    let (code, v) = run_json(&["verify-symmetry", s(&g)]);
    assert_eq!(code, 4);
    assert!(v["error"].as_str().unwrap().contains("weight-sharing"));
}

#[test]
fn simulation_matches_shipped_networks() {
    let dir = tempfile::tempdir().unwrap();
    for (name, x) in [
        ("mlp_2_3_2.json", "[[0.5, -1.0], [2.0, 0.25]]"),
        ("residual_relu.json", "[1.0, -2.0, 0.5]"),
        ("linear_only.json", "[0.1, 0.2, 0.3]"),
        ("conv_two_channels.json", "[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16]"),
    ] {
        let xp = dir.path().join("x.json");
        std::fs::write(&xp, x).unwrap();
        let (code, v) = run_json(&["simulate-forward", s(&net(name)), s(&xp)]);
        assert_eq!(code, 0, "{name}");
        assert!(v["max_deviation"].as_f64().unwrap() < 1e-9, "{name}: {v}");
    }
    let xp = dir.path().join("x1.json");
    std::fs::write(&xp, "[0.3]").unwrap();
    assert_eq!(run(&["simulate-forward", s(&net("sine_inr.json")), s(&xp)]).status.code(), Some(3));
    std::fs::write(&xp, "[0.3, 0.1]").unwrap();
    assert_eq!(run(&["simulate-forward", s(&net("linear_only.json")), s(&xp)]).status.code(), Some(2));
}

fn gen_train_eval(dir: &Path, threads: &str) -> (Value, Value, Vec<u8>) {
    let data = dir.join("data");
    let ckpt = dir.join("model.ckpt");
    let status = bin()
        .env("NEUROGRAPH_THREADS", threads)
        .args(["gen-data", "--task", "inr", "--n", "50", "--seed", "5", "--widths", "1,8,1", "--out", s(&data)])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, "seed = 2\n[train]\nepochs = 5\n[model]\nhidden = 8\n").unwrap();
    let out = bin()
        .env("NEUROGRAPH_THREADS", threads)
        .args(["--json", "train", "--data", s(&data), "--config", s(&cfg), "--lr", "0.002", "--out", s(&ckpt)])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trained: Value = serde_json::from_slice(&out.stdout).unwrap();
    let (code, mut metrics) = run_json(&["eval", "--model", s(&ckpt), "--data", s(&data)]);
    assert_eq!(code, 0);
    assert_eq!(metrics["config"]["command"], "eval");
    metrics.as_object_mut().unwrap().remove("config");
    (trained, metrics, std::fs::read(&ckpt).unwrap())
}

#[test]
fn gen_train_eval_round_trip_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (trained, metrics, ckpt) = gen_train_eval(a.path(), "1");
    let config = &trained["config"];
    assert_eq!(config["seed"], 2);
    assert_eq!(config["train"]["epochs"], 5);
    assert_eq!(config["train"]["lr"], 0.002);
    assert_eq!(config["model"]["hidden"], 8);
    assert!(a.path().join("model.trace.csv").exists());
    let trace = std::fs::read_to_string(a.path().join("model.trace.csv")).unwrap();
    assert!(trace.starts_with("epoch,train_loss,val_loss,val_r2,val_tau\n"));
    assert_eq!(trace.lines().count(), 6);
    assert_eq!(metrics["count"].as_u64(), trained["test"]["count"].as_u64());
    assert_eq!(metrics["mse"], trained["test"]["mse"]);

    let (trained2, metrics2, ckpt2) = gen_train_eval(b.path(), "2");
    assert_eq!(metrics, metrics2);
    assert_eq!(trained["final"], trained2["final"]);
    assert_eq!(ckpt, ckpt2);

    let csv = run(&["eval", "--model", s(&a.path().join("model.ckpt")), "--data", s(&a.path().join("data")), "--split", "all"]);
    let text = String::from_utf8(csv.stdout).unwrap();
    assert!(text.starts_with("task,split,count,mse,r2,tau\ninr,all,"));
}

#[test]
fn edit_task_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("edit");
    let ckpt = dir.path().join("edit.ckpt");
    assert!(run(&["gen-data", "--task", "edit", "--n", "12", "--widths", "1,4,1", "--out", s(&data)]).status.success());
    let (code, v) = run_json(&["train", "--data", s(&data), "--epochs", "3", "--out", s(&ckpt)]);
    assert_eq!(code, 0, "{v}");
    assert_eq!(v["config"]["model"]["readout"], "per_edge");
    let (code, m) = run_json(&["eval", "--model", s(&ckpt), "--data", s(&data), "--split", "train"]);
    assert_eq!(code, 0);
    assert!(m["mse"].as_f64().unwrap().is_finite());
}

#[test]
fn bad_runs_fail_with_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    std::fs::write(&ckpt, b"garbage").unwrap();
    assert_eq!(run(&["eval", "--model", s(&ckpt), "--data", s(&empty)]).status.code(), Some(2));

    let data = dir.path().join("acc");
    assert!(run(&["gen-data", "--task", "acc", "--n", "10", "--out", s(&data)]).status.success());
    assert_eq!(run(&["eval", "--model", s(&ckpt), "--data", s(&data)]).status.code(), Some(2));
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nepochz = 3\n").unwrap();
    let out = run(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&ckpt)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
    assert_eq!(run(&["train", "--data", s(&data), "--task", "inr", "--out", s(&ckpt)]).status.code(), Some(2));
    let out = bin().env("NEUROGRAPH_THREADS", "many").args(["gen-data", "--task", "acc", "--n", "10", "--out", s(&data)]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
