use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use arc_gad::graph::load_graph;
use arc_gad::model::{Model, ModelConfig};
use arc_gad::trainer::Checkpoint;
use serde_json::Value;
use tempfile::TempDir;

fn gad(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gad"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = gad(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Writes a GADG file byte by byte from an undirected edge list.
fn write_fixture(path: &Path, name: &str, n: usize, edges: &[(usize, usize)], x: &[Vec<f64>], labels: Option<&[bool]>) {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b as u64);
        adj[b].push(a as u64);
    }
    adj.iter_mut().for_each(|r| r.sort_unstable());
    let mut buf = b"GADG".to_vec();
    buf.extend_from_slice(&1u32.to_le_bytes());
    for v in [n, edges.len(), x[0].len()] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    buf.push(labels.is_some() as u8);
    let mut off = 0u64;
    buf.extend_from_slice(&off.to_le_bytes());
    for r in &adj {
        off += r.len() as u64;
        buf.extend_from_slice(&off.to_le_bytes());
    }
    for c in adj.iter().flatten() {
        buf.extend_from_slice(&c.to_le_bytes());
    }
    for v in x.iter().flatten() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(l) = labels {
        buf.extend(l.iter().map(|&b| b as u8));
    }
    buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    std::fs::write(path, buf).unwrap();
}

/// 40-node ring with chords; nodes 0..4 are labeled anomalous and carry shifted features.
fn ring_fixture(dir: &Path, file: &str) -> PathBuf {
    let n = 40;
    let edges: Vec<_> = (0..n).flat_map(|i| [(i, (i + 1) % n), (i, (i + 7) % n)]).collect();
    let x: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..6).map(|j| ((i * 7 + j * 3) % 11) as f64 / 11.0 + if i < 4 { 3.0 } else { 0.0 }).collect())
        .collect();
    let labels: Vec<bool> = (0..n).map(|i| i < 4).collect();
    let path = dir.join(file);
    write_fixture(&path, file.trim_end_matches(".gadg"), n, &edges, &x, Some(&labels));
    path
}

fn small_config(dir: &Path) {
    std::fs::write(
        dir.join("cfg.json"),
        r#"{"model": {"unified_dim": 4, "encoder": {"hops": 2, "hidden": 8, "mlp_depth": 2}},
            "train": {"n_k": 4, "queries_per_class": 4, "epochs": 2, "seed": 3},
            "zero_shot": {"n_k": 4, "rounds": 2}}"#,
    )
    .unwrap();
}

fn setup() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    ring_fixture(dir.path(), "a.gadg");
    ring_fixture(dir.path(), "b.gadg");
    small_config(dir.path());
    dir
}

#[test]
fn fixture_round_trips_through_loader() {
    let dir = setup();
    let g = load_graph(&dir.path().join("a.gadg")).unwrap();
    assert_eq!((g.node_count(), g.edge_count(), g.feature_dim()), (40, 80, 6));
    assert_eq!(g.anomaly_count(), 4);
}

#[test]
fn exit_codes_by_error_class() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["train", "--config", "cfg.json", "-o", "m.gadp", "a.gadg"]);
    let code = |args: &[&str]| gad(d, args).status.code().unwrap();
    assert_eq!(code(&["eval", "--scores", "missing.csv", "--graph", "a.gadg"]), 3);
    assert_eq!(code(&["score", "fewshot", "--checkpoint", "m.gadp", "--graph", "a.gadg"]), 2);
    assert_eq!(
        code(&["score", "zeroshot", "--checkpoint", "m.gadp", "--graph", "a.gadg", "--normal-ids", "5"]),
        2
    );
    assert_eq!(
        code(&["score", "fewshot", "--checkpoint", "m.gadp", "--graph", "a.gadg", "--normal-ids", "5", "--trace", "t.json"]),
        2
    );
    std::fs::write(d.join("bad.json"), r#"{"train": {"epoch": 1}}"#).unwrap();
    assert_eq!(code(&["train", "--config", "bad.json", "-o", "x.gadp", "a.gadg"]), 2);
    std::fs::write(d.join("junk.gadg"), b"NOPE").unwrap();
    assert_eq!(code(&["inject", "junk.gadg", "-o", "j.gadg"]), 3);
    let threads = Command::new(env!("CARGO_BIN_EXE_gad"))
        .args(["eval", "--scores", "s.csv", "--graph", "a.gadg"])
        .current_dir(d)
        .env("GAD_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(2));
}

#[test]
fn zero_epochs_saves_initial_parameters() {
    let dir = setup();
    let d = dir.path();
    let stdout = ok(d, &["train", "--config", "cfg.json", "--epochs", "0", "-o", "m.gadp", "a.gadg"]);
    assert!(stdout.trim().is_empty());
    let ck = Checkpoint::load(&d.join("m.gadp")).unwrap();
    let cfg = ModelConfig { unified_dim: 4, ..ck.model.config };
    let init = Model::init(cfg, 3).unwrap();
    assert_eq!(ck.model.params, init.params);
}

#[test]
fn one_loss_line_per_epoch_and_dataset() {
    let dir = setup();
    let d = dir.path();
    let stdout = ok(d, &["train", "--config", "cfg.json", "--epochs", "3", "-o", "m.gadp", "a.gadg", "b.gadg"]);
    let rows: Vec<Value> = stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let train: Vec<_> = rows.iter().filter(|r| r["kind"] == "train").collect();
    assert_eq!(train.len(), 6);
    let mut pairs: Vec<(u64, String)> = train
        .iter()
        .map(|r| (r["epoch"].as_u64().unwrap(), r["dataset"].as_str().unwrap().to_string()))
        .collect();
    pairs.sort();
    pairs.dedup();
    assert_eq!(pairs.len(), 6);
    assert!(train.iter().all(|r| r["loss"].as_f64().unwrap().is_finite()));
}

#[test]
fn eval_of_perfect_ranking_and_foreign_ids() {
    let dir = setup();
    let d = dir.path();
    let mut csv = String::from("node_id,score\n");
    for i in 0..40 {
        csv.push_str(&format!("{i},{}\n", if i < 4 { 1.0 } else { 0.0 }));
    }
    std::fs::write(d.join("s.csv"), &csv).unwrap();
    let v: Value = serde_json::from_str(&ok(d, &["eval", "--scores", "s.csv", "--graph", "a.gadg"])).unwrap();
    assert_eq!(v["auroc"], 1.0);
    assert_eq!(v["auprc"], 1.0);
    assert_eq!((v["positives"].as_u64(), v["negatives"].as_u64()), (Some(4), Some(36)));

    csv.push_str("40,0.5\n");
    std::fs::write(d.join("bad.csv"), &csv).unwrap();
    assert!(!gad(d, &["eval", "--scores", "bad.csv", "--graph", "a.gadg"]).status.success());
}

#[test]
fn score_outputs_cover_the_right_nodes() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["train", "--config", "cfg.json", "-o", "m.gadp", "a.gadg"]);
    let few = ok(d, &["score", "fewshot", "--checkpoint", "m.gadp", "--graph", "b.gadg", "--normal-ids", "10,20,30"]);
    assert_eq!(few.lines().count(), 1 + 37);
    assert!(!few.lines().any(|l| l.starts_with("10,") || l.starts_with("20,")));
    let zero = ok(
        d,
        &["score", "zeroshot", "--config", "cfg.json", "--checkpoint", "m.gadp", "--graph", "b.gadg", "--trace", "t.json"],
    );
    assert_eq!(zero.lines().count(), 1 + 40);
    let trace: Value = serde_json::from_str(&std::fs::read_to_string(d.join("t.json")).unwrap()).unwrap();
    assert_eq!(trace["rounds"].as_array().unwrap().len(), 2);
}

#[test]
fn sweep_rows_are_independent_of_value_order() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["train", "--config", "cfg.json", "-o", "m.gadp", "a.gadg"]);
    let run = |values: &str| -> Value {
        let out = ok(
            d,
            &["sweep", "--param", "n_k", "--values", values, "--graphs", "b.gadg", "--checkpoint", "m.gadp", "--seeds", "0,1"],
        );
        serde_json::from_str(&out).unwrap()
    };
    let fwd = run("2,10");
    let rev = run("10,2");
    let rows = fwd["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let find = |t: &Value, v: u64| t["rows"].as_array().unwrap().iter().find(|r| r["value"] == v).unwrap().clone();
    for v in [2, 10] {
        assert_eq!(find(&fwd, v), find(&rev, v));
        assert_eq!(find(&fwd, v)["auroc"]["count"], 2);
    }
}

#[test]
fn bench_reports_each_size() {
    let dir = setup();
    let d = dir.path();
    let out = ok(d, &["bench", "--nodes", "200", "--edges", "400,1600", "--raw-dim", "8", "--repeats", "1"]);
    let rows: Vec<Value> = serde_json::from_str(&out).unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(gad(d, &["bench", "--nodes", "200", "--edges", "400"]).status.code(), Some(2));
}

#[test]
fn inject_labels_the_requested_count() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let n = 120;
    let edges: Vec<_> = (0..n).flat_map(|i| [(i, (i + 1) % n), (i, (i + 5) % n)]).collect();
    let x: Vec<Vec<f64>> = (0..n).map(|i| vec![(i % 9) as f64, (i % 4) as f64]).collect();
    write_fixture(&d.join("raw.gadg"), "raw", n, &edges, &x, None);
    std::fs::write(
        d.join("spec.json"),
        r#"{"clique_size": 5, "clique_count": 2, "attribute_count": 6, "candidate_pool": 10, "seed": 4}"#,
    )
    .unwrap();
    let meta: Value = serde_json::from_str(&ok(d, &["inject", "raw.gadg", "-o", "inj.gadg", "--spec", "spec.json"])).unwrap();
    assert_eq!(meta["anomaly_count"], 16);
    let g = load_graph(&d.join("inj.gadg")).unwrap();
    assert_eq!(g.anomaly_count(), 16);
    assert!(g.edge_count() > edges.len());
}

#[test]
fn synth_preset_writes_every_domain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(d, &["synth", "--preset", "acceptance", "--n", "200", "--out-dir", "data"]);
    let metas: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(metas.len(), 5);
    for m in &metas {
        let g = load_graph(&d.join("data").join(format!("{}.gadg", m["name"].as_str().unwrap()))).unwrap();
        assert_eq!(g.node_count(), 200);
        assert!(g.anomaly_count() > 0);
    }
}

#[test]
fn export_writes_matrices_and_attention() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["train", "--config", "cfg.json", "--epochs", "0", "-o", "m.gadp", "a.gadg"]);
    ok(
        d,
        &[
            "export", "--checkpoint", "m.gadp", "--graph", "b.gadg", "--aligned", "x.csv", "--embeddings", "h.csv",
            "--attention", "w.csv", "--normal-ids", "5,6",
        ],
    );
    let read = |f: &str| std::fs::read_to_string(d.join(f)).unwrap();
    assert!(read("x.csv").starts_with("node_id,x0,"));
    assert_eq!(read("h.csv").lines().count(), 41);
    let w = read("w.csv");
    assert!(w.starts_with("query_id,context_id,weight"));
    assert_eq!(w.lines().count(), 1 + 38 * 2);
    assert_eq!(gad(d, &["export", "--checkpoint", "m.gadp", "--graph", "b.gadg", "--attention", "w2.csv"]).status.code(), Some(2));
}
