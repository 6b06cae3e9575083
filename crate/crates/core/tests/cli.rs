use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_splitrank");

fn run(args: &[&str]) -> Value {
    let out = Command::new(BIN).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    if stdout.trim().is_empty() {
        Value::Null
    } else {
        serde_json::from_str(&stdout).unwrap_or(Value::String(stdout))
    }
}

/// Server process, killed on drop.
struct Server {
    child: Child,
    addr: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn serve(args: &[&str]) -> Server {
    let mut child = Command::new(BIN)
        .args(args)
        .args(["--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let v: Value = serde_json::from_str(&line).unwrap_or_else(|e| panic!("{args:?}: {line:?}: {e}"));
    Server { child, addr: v["listening"].as_str().unwrap().to_string() }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

fn small_data(dir: &Path) -> PathBuf {
    let cfg = dir.join("gen.json");
    let gen = json!({
        "seed": 5, "n_members": 800, "n_clusters": 4, "skills_per_cluster": 6,
        "synonym_groups_per_cluster": 3, "titles_per_cluster": 3, "n_companies": 30,
        "queries_per_cluster": 5, "train_examples": 1500, "heldout_examples": 200
    });
    fs::write(&cfg, gen.to_string()).unwrap();
    let data = dir.join("data");
    let rep = run(&["gen-data", "--config", s(&cfg), "--out", s(&data)]);
    assert_eq!(rep["members"], 800);
    data
}

fn train(data: &Path, out: &Path) -> Value {
    run(&["train", "--data", s(data), "--epochs", "2", "--embed-dim", "8", "--out", s(out)])
}

#[test]
fn training_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_data(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let ra = train(&data, &a);
    let rb = train(&data, &b);
    assert_eq!(ra["epoch_loss"], rb["epoch_loss"]);
    assert_eq!(files(&a), files(&b));
    assert_eq!(ra["epoch_loss"].as_array().unwrap().len(), 2);
}

#[test]
fn offline_pipeline_then_served_queries() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let data = small_data(t);
    train(&data, &t.join("model"));
    run(&["split", "--model", s(&t.join("model")), "--version", "4", "--out", s(&t.join("bundles"))]);
    let idx = run(&[
        "build-index",
        "--members",
        s(&data.join("corpus.jsonl")),
        "--member-arm",
        s(&t.join("bundles/member")),
        "--shards",
        "2",
        "--out",
        s(&t.join("index")),
    ]);
    let sizes: Vec<u64> = idx["shard_sizes"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(sizes.iter().sum::<u64>(), 800);
    let dict = run(&[
        "build-dict",
        "--query-arm",
        s(&t.join("bundles/query")),
        "--log",
        s(&data.join("queries.jsonl")),
        "--out",
        s(&t.join("dict.embd")),
    ]);
    assert!(dict["coverage"].as_f64().unwrap() > 0.5);

    let shards: Vec<Server> = (0..2)
        .map(|i| {
            serve(&[
                "serve-searcher",
                "--shard",
                s(&t.join(format!("index/shard{i}"))),
                "--cross",
                s(&t.join("bundles/cross")),
            ])
        })
        .collect();
    fs::write(
        t.join("broker.json"),
        json!({ "shards": shards.iter().map(|s| &s.addr).collect::<Vec<_>>(), "timeout_ms": 5000 }).to_string(),
    )
    .unwrap();
    let broker = serve(&["serve-broker", "--config", s(&t.join("broker.json"))]);
    fs::write(
        t.join("frontend.json"),
        json!({ "dict": "dict.embd", "query_arm": "bundles/query", "broker": broker.addr, "w_sem": 1.0, "w_term": 1.0 })
            .to_string(),
    )
    .unwrap();
    let fe = serve(&["serve-frontend", "--config", s(&t.join("frontend.json"))]);

    let one = run(&["query", "--frontend", &fe.addr, "--text", "anything", "--k", "5"]);
    assert!(one["hits"].as_array().unwrap().len() <= 5);
    assert!(one["trace"]["total_us"].as_u64().is_some());

    let run_path = t.join("run.jsonl");
    run(&["query", "--frontend", &fe.addr, "--queries", s(&data.join("queries.jsonl")), "--k", "10", "--out", s(&run_path)]);
    assert_eq!(fs::read_to_string(&run_path).unwrap().lines().count(), 20);
    let report = run(&["eval", "--run", s(&run_path), "--judgments", s(&data.join("judgments.jsonl")), "--k", "10"]);
    assert_eq!(report["evaluated"], 20);
    assert!(report["mean"].as_f64().unwrap() > 0.0);

    let reqs = t.join("requests.jsonl");
    fs::write(&reqs, format!("{}\n", json!({ "type": "user_search", "text": "x", "facets": {} }))).unwrap();
    let b = run(&["bench", "--target", &fe.addr, "--requests", s(&reqs), "--duration", "0.5"]);
    assert_eq!(b["errors"], 0);
    assert!(b["samples"].as_u64().unwrap() > 0);
    assert!(b["phases"]["qarm_us"]["p99"].as_u64().is_some());
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["split", "--model", s(&tmp.path().join("missing")), "--version", "1", "--out", s(tmp.path())])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = Command::new(BIN)
        .args(["query", "--frontend", "127.0.0.1:1", "--facet", "noequals"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
