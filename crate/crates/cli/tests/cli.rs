use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn bridgeprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bridgeprobe"))
        .args(args)
        .env_remove("BRIDGEPROBE_BACKEND")
        .output()
        .unwrap()
}

fn mock_command(mode: &str) -> String {
    format!("cmd:{} --mode {mode}", env!("CARGO_BIN_EXE_mockserver"))
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.lines().last().unwrap()).unwrap()
}

struct HttpServer(Child, String);

impl HttpServer {
    fn start(mode: &str) -> Self {
        let mut child = Command::new(env!("CARGO_BIN_EXE_mockserver"))
            .args(["--mode", mode, "--http", "127.0.0.1:0"])
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
        let url = line.trim().strip_prefix("listening on ").unwrap().to_string();
        HttpServer(child, url)
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn missing_predictions_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let out = bridgeprobe(&["eval", "--preds", missing.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = error_json(&out);
    assert_eq!(err["error"], "file not found");
    assert!(err["message"].as_str().unwrap().contains("missing.jsonl"));
}

#[test]
fn usage_errors_exit_with_two() {
    let out = bridgeprobe(&["cloze", "--corpus", "x", "--backend", "mock:uniform", "--perturb", "--of", "without"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");
    let out = bridgeprobe(&["attention", "--corpus", "x", "--backend", "mock:uniform", "--jobs", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = bridgeprobe(&["cloze", "--corpus", "x", "--backend", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cloze_through_child_process_backend() {
    let dir = tempfile::tempdir().unwrap();
    let backend = mock_command("delta:firms");
    let out = bridgeprobe(&[
        "cloze",
        "--corpus", fixture("tiny.bpc.json").to_str().unwrap(),
        "--backend", &backend,
        "--context-scope", "more",
        "--candidate-scope", "all",
        "--of", "with",
        "--seed", "7",
        "--out", dir.path().to_str().unwrap(),
    ]);
    ok(&out);
    let preds = lines(&dir.path().join("predictions.jsonl"));
    assert_eq!(preds.len(), 3);
    assert_eq!(preds[0]["anaphor_id"], "d1:m4");
    assert_eq!(preds[0]["predicted"], "m1");
    assert_eq!(preds[0]["correct"], true);
    assert_eq!(preds[0]["seed"], 7);
    assert_eq!(preds[0]["scope"], "more");
    assert_eq!(preds[0]["candidate_scope"], "all");
    assert_eq!(preds[0]["of_variant"], "with");
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "cloze");
    assert!(dir.path().join("report.csv").exists());

    let eval = bridgeprobe(&["eval", "--preds", dir.path().join("predictions.jsonl").to_str().unwrap(), "--breakdown", "context,of"]);
    ok(&eval);
    let table = String::from_utf8(eval.stdout).unwrap();
    assert!(table.contains("context:more"));
    assert!(table.contains("of:with"));
}

#[test]
fn http_backend_matches_in_process_mock() {
    let server = HttpServer::start("random:5");
    let corpus = fixture("synthetic.bpc.json");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, backend) in [(&a, server.1.clone()), (&b, "mock:random:5".to_string())] {
        ok(&bridgeprobe(&[
            "cloze",
            "--corpus", corpus.to_str().unwrap(),
            "--backend", &backend,
            "--out", dir.path().to_str().unwrap(),
        ]));
    }
    for name in ["predictions.jsonl", "skipped.jsonl", "report.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn full_span_attention_logs_exclusions() {
    let dir = tempfile::tempdir().unwrap();
    let out = bridgeprobe(&[
        "attention",
        "--corpus", fixture("synthetic.bpc.json").to_str().unwrap(),
        "--backend", "mock:uniform",
        "--mode", "full",
        "--subset", "all",
        "--out", dir.path().to_str().unwrap(),
    ]);
    ok(&out);
    let skipped = lines(&dir.path().join("skipped.jsonl"));
    assert_eq!(skipped.len(), 4);
    for s in &skipped {
        let reason = s["reason"].as_str().unwrap();
        assert!(reason.starts_with("excluded: sentence distance ") && reason.ends_with(" exceeds 10"), "{reason}");
    }
    let signals = std::fs::read_to_string(dir.path().join("signals.csv")).unwrap();
    assert_eq!(signals.lines().count(), 1 + (76 - 4) * 2 * 144);
    let heatmap = std::fs::read_to_string(dir.path().join("heatmap_ana2ante_all.csv")).unwrap();
    assert!(heatmap.lines().nth(1).unwrap().starts_with("1,1.0000,1.0000"));
    assert!(!dir.path().join("heatmap_ana2ante_gt10.csv").exists());
}

#[test]
fn head_selection_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("attn");
    ok(&bridgeprobe(&[
        "attention",
        "--corpus", fixture("tiny.bpc.json").to_str().unwrap(),
        "--backend", "mock:random:2",
        "--select-heads",
        "--svg",
        "--out", out.to_str().unwrap(),
    ]));
    let preds = lines(&out.join("predictions.jsonl"));
    assert_eq!(preds.len(), 3);
    assert!(preds.iter().all(|p| p["method"] == "heads" && p["of_variant"].is_null()));
    assert!(out.join("heatmap_ante2ana_all.svg").exists());

    let rendered = dir.path().join("report");
    ok(&bridgeprobe(&[
        "report",
        "--signals", out.join("signals.csv").to_str().unwrap(),
        "--preds", out.join("predictions.jsonl").to_str().unwrap(),
        "--out", rendered.to_str().unwrap(),
    ]));
    assert_eq!(
        std::fs::read(out.join("heatmap_ana2ante_all.csv")).unwrap(),
        std::fs::read(rendered.join("heatmap_ana2ante_all.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(out.join("report.csv")).unwrap(),
        std::fs::read(rendered.join("report.csv")).unwrap()
    );

    let bad = bridgeprobe(&[
        "attention",
        "--corpus", fixture("tiny.bpc.json").to_str().unwrap(),
        "--backend", "mock:uniform",
        "--select-heads", "13:1",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(error_json(&bad)["message"].as_str().unwrap().contains("--select-heads"));
}

#[test]
fn jobs_do_not_change_outputs() {
    let corpus = fixture("synthetic.bpc.json");
    let one = tempfile::tempdir().unwrap();
    let four = tempfile::tempdir().unwrap();
    for (dir, jobs) in [(&one, "1"), (&four, "4")] {
        ok(&bridgeprobe(&[
            "attention",
            "--corpus", corpus.to_str().unwrap(),
            "--backend", "mock:random:9",
            "--select-heads",
            "--jobs", jobs,
            "--out", dir.path().to_str().unwrap(),
        ]));
    }
    for name in ["signals.csv", "predictions.jsonl", "skipped.jsonl", "heatmap_ana2ante_all.csv"] {
        assert_eq!(std::fs::read(one.path().join(name)).unwrap(), std::fs::read(four.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn backend_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_bridgeprobe"))
        .args(["cloze", "--corpus", fixture("tiny.bpc.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .env("BRIDGEPROBE_BACKEND", "mock:delta:firms")
        .output()
        .unwrap();
    ok(&out);
    assert!(dir.path().join("predictions.jsonl").exists());
}

#[test]
fn convert_writes_corpus_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let output = dir.path().join("doc.bpc.json");
    let out = bridgeprobe(&[
        "convert",
        "--input", fixture("standoff").to_str().unwrap(),
        "--output", output.to_str().unwrap(),
    ]);
    ok(&out);
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["instances"], 2);
    let docs = lines(&output);
    assert_eq!(docs.len(), 1);
    let log = std::fs::read_to_string(dir.path().join("doc.bpc.json.log")).unwrap();
    assert!(log.contains("m9"));
}

#[test]
fn mockserver_answers_malformed_lines() {
    use std::io::Write;
    let mut child = Command::new(env!("CARGO_BIN_EXE_mockserver"))
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    {
        let mut stdin = child.stdin.take().unwrap();
        writeln!(stdin, "{{\"op\":\"nope\",\"id\":\"4\"}}").unwrap();
        writeln!(stdin, "not json").unwrap();
        writeln!(stdin, "{{\"op\":\"describe\",\"id\":\"5\"}}").unwrap();
    }
    let out = child.wait_with_output().unwrap();
    let replies: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(replies.len(), 3);
    assert_eq!((replies[0]["id"].as_str(), replies[0]["error"]["code"].as_str()), (Some("4"), Some("bad_request")));
    assert_eq!(replies[1]["ok"], false);
    assert_eq!(replies[2]["payload"]["mask_piece"], "[MASK]");
}
