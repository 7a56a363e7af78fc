use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn mmlink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmlink")).args(args).env_remove("MMLINK_THREADS").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = mmlink(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const WORDS: &[&str] = &[
    "丸永", "丸水", "明治製菓", "明治製薬", "日本紙加工", "日本紙", "大田", "太田", "土木", "士木", "末広", "未広", "人形", "入形",
    "千代田", "干代田", "王子", "玉子", "白鳥", "百鳥", "田中", "由中", "木村", "本村",
];

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("words.txt"), WORDS.join("\n") + "\n").unwrap();
        Fixture { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn synth(&self) -> PathBuf {
        let out = self.path("synth");
        ok(&["synth", "--words", s(&self.path("words.txt")), "--views", "4", "--visual-dim", "16", "--aug-strength", "0.5", "--seed", "3", "--out-dir", s(&out)]);
        out.join("records.jsonl")
    }

    /// Splits synthetic records into view-0 targets and view-1 queries plus truth.
    fn link_inputs(&self, records: &Path) -> (PathBuf, PathBuf, PathBuf) {
        let text = fs::read_to_string(records).unwrap();
        let (mut q, mut t, mut truth) = (String::new(), String::new(), String::new());
        for line in text.lines() {
            let v: Value = serde_json::from_str(line).unwrap();
            let id = v["id"].as_str().unwrap();
            let label = v["label"].as_str().unwrap();
            if id.ends_with("#0") {
                t.push_str(line);
                t.push('\n');
            } else if id.ends_with("#1") {
                q.push_str(line);
                q.push('\n');
                truth.push_str(&format!("{{\"query_id\":\"{id}\",\"target_ids\":[\"{label}#0\"]}}\n"));
            }
        }
        let paths = (self.path("queries.jsonl"), self.path("targets.jsonl"), self.path("truth.jsonl"));
        fs::write(&paths.0, q).unwrap();
        fs::write(&paths.1, t).unwrap();
        fs::write(&paths.2, truth).unwrap();
        paths
    }
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn full_pipeline_runs_and_reports() {
    let fx = Fixture::new();
    let records = fx.synth();
    let pre = fx.path("pre");
    ok(&["pretrain", "--records", s(&records), "--embed-dim", "8", "--hash-dim", "256", "--batch-size", "24", "--epochs", "3", "--lr-max", "0.005", "--out-dir", s(&pre)]);
    let trace = fs::read_to_string(pre.join("trace.csv")).unwrap();
    assert!(trace.starts_with("epoch,step,lr,loss\n"));

    let mined = fx.path("mined");
    ok(&["mine", "--records", s(&records), "--model", s(&pre.join("model.ckpt")), "--k", "3", "--m", "2", "--batch-size", "12", "--seed", "4", "--out-dir", s(&mined)]);
    assert_eq!(fs::read_to_string(mined.join("sets.jsonl")).unwrap().lines().count(), WORDS.len());

    let trained = fx.path("trained");
    ok(&["train", "--records", s(&records), "--model", s(&pre.join("model.ckpt")), "--sets", s(&mined.join("sets.jsonl")), "--k", "3", "--m", "2", "--batch-size", "12", "--epochs", "2", "--lr-max", "0.005", "--out-dir", s(&trained)]);
    let fixed = fx.path("trained-fixed");
    ok(&["train", "--records", s(&records), "--model", s(&pre.join("model.ckpt")), "--plan", s(&mined.join("plan.jsonl")), "--k", "3", "--m", "2", "--batch-size", "12", "--epochs", "1", "--out-dir", s(&fixed)]);

    let (q, t, truth) = fx.link_inputs(&records);
    let linked = fx.path("linked");
    ok(&["link", "--queries", s(&q), "--targets", s(&t), "--model", s(&trained.join("model.ckpt")), "--mode", "multimodal", "--out-dir", s(&linked)]);
    let preds = fs::read_to_string(linked.join("predictions.csv")).unwrap();
    assert!(preds.starts_with("query_id,predicted,score\n"));
    assert_eq!(preds.lines().count(), WORDS.len() + 1);

    let evaluated = fx.path("eval");
    ok(&["eval", "--predictions", s(&linked.join("predictions.csv")), "--truth", s(&truth), "--out-dir", s(&evaluated)]);
    let report = read_json(&evaluated.join("report.json"));
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(report["n_queries"], WORDS.len());
    assert_eq!(report["mode"], "multimodal");

    let manifest = read_json(&evaluated.join("manifest.json"));
    assert_eq!(manifest["command"], "eval");
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 2);
    assert!(manifest["outputs"]["report.json"].is_string());
}

#[test]
fn stringmatch_and_graph() {
    let fx = Fixture::new();
    let records = fx.synth();
    let (q, t, truth) = fx.link_inputs(&records);
    let table = fx.path("strokes.tsv");
    fs::write(&table, "永\t丶 乛 水\n水\t亅 乛 水\n").unwrap();
    for extra in [&["--metric", "lev"][..], &["--metric", "ngram", "--n", "2"], &["--metric", "ngram", "--unit", "stroke", "--table", s(&table)]] {
        let out = fx.path("sm");
        let mut args = vec!["stringmatch", "--queries", s(&q), "--targets", s(&t), "--out-dir", s(&out)];
        args.extend_from_slice(extra);
        ok(&args);
        ok(&["eval", "--predictions", s(&out.join("predictions.csv")), "--truth", s(&truth), "--mode", "string-metric", "--out-dir", s(&fx.path("sm-eval"))]);
    }
    assert_eq!(mmlink(&["stringmatch", "--queries", s(&q), "--targets", s(&t), "--metric", "ngram", "--unit", "stroke", "--out-dir", s(&fx.path("x"))]).status.code(), Some(2));

    let preds = fx.path("preds.csv");
    fs::write(&preds, "query_id,predicted,score\nq1,S,0.9\nq2,NO_MATCH,0.1\nq3,S,0.8\n").unwrap();
    let rel = fx.path("rel.csv");
    fs::write(&rel, "firm,query_id\nF,q1\nF,q2\nG,q3\n").unwrap();
    let out = fx.path("graph");
    ok(&["graph", "--relations", s(&rel), "--predictions", s(&preds), "--seeds", "S", "--out-dir", s(&out)]);
    assert_eq!(fs::read_to_string(out.join("graph.csv")).unwrap(), "node,avg_distance,degree\nF,1,1\nG,1,1\nS,0,2\n");
}

#[test]
fn missing_input_is_a_config_error_without_outputs() {
    let fx = Fixture::new();
    let out = fx.path("linked");
    let r = mmlink(&["link", "--queries", s(&fx.path("words.txt")), "--targets", s(&fx.path("nope.jsonl")), "--model", s(&fx.path("m.ckpt")), "--out-dir", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let fx = Fixture::new();
    let cfg = fx.path("run.conf");
    fs::write(&cfg, "# shared run config\nviews = 2\nvisual_dim = 8\nseed = 11\nepochs = 9\n").unwrap();
    let out = fx.path("s");
    ok(&["synth", "--config", s(&cfg), "--words", s(&fx.path("words.txt")), "--seed", "12", "--out-dir", s(&out)]);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["config"]["views"], 2);
    assert_eq!(manifest["config"]["visual_dim"], 8);
    assert_eq!(manifest["config"]["seed"], 12);
    assert_eq!(manifest["seeds"]["seed"], 12);
    assert_eq!(fs::read_to_string(out.join("records.jsonl")).unwrap().lines().count(), 2 * WORDS.len());

    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let r = mmlink(&["synth", "--config", s(&cfg), "--words", s(&fx.path("words.txt")), "--out-dir", s(&fx.path("t"))]);
    assert_eq!(r.status.code(), Some(2));
    let r = mmlink(&["synth", "--words", s(&fx.path("words.txt")), "--p-sub", "0.9", "--p-del", "0.5", "--out-dir", s(&fx.path("t"))]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical_at_any_thread_count() {
    let fx = Fixture::new();
    let records = fx.synth();
    let first = fs::read(&records).unwrap();
    let again = fx.path("synth2");
    ok(&["synth", "--words", s(&fx.path("words.txt")), "--views", "4", "--visual-dim", "16", "--aug-strength", "0.5", "--seed", "3", "--threads", "3", "--out-dir", s(&again)]);
    assert_eq!(first, fs::read(again.join("records.jsonl")).unwrap());

    let pre = |name: &str, threads: &str| {
        let out = fx.path(name);
        ok(&["pretrain", "--records", s(&records), "--embed-dim", "8", "--hash-dim", "256", "--batch-size", "24", "--epochs", "2", "--threads", threads, "--out-dir", s(&out)]);
        out
    };
    let (a, b) = (pre("p1", "1"), pre("p2", "4"));
    for f in ["model.ckpt", "trace.csv", "manifest.json"] {
        let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        if f == "manifest.json" {
            // Only the output directory differs between the two manifests.
            assert_eq!(read_json(&a.join(f))["outputs"], read_json(&b.join(f))["outputs"]);
        } else {
            assert_eq!(x, y, "{f} differs");
        }
    }
    let (q, t, _) = fx.link_inputs(&records);
    let link = |name: &str, threads: &str| {
        let out = fx.path(name);
        ok(&["link", "--queries", s(&q), "--targets", s(&t), "--model", s(&a.join("model.ckpt")), "--threads", threads, "--out-dir", s(&out)]);
        fs::read(out.join("predictions.csv")).unwrap()
    };
    assert_eq!(link("l1", "1"), link("l2", "2"));
}

#[test]
fn ingest_reports_violations() {
    let fx = Fixture::new();
    let recs = fx.path("r.jsonl");
    fs::write(&recs, "{\"id\":\"a\",\"text\":\"x\",\"vec\":[1.0,0.0]}\n{\"id\":\"a\",\"text\":\"y\",\"vec\":[1.0]}\n").unwrap();
    let out = fx.path("ing");
    let r = mmlink(&["ingest", "--records", s(&recs), "--out-dir", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    let report = fs::read_to_string(out.join("validation.json")).unwrap();
    assert!(report.contains("duplicate") || report.contains("Duplicate"), "{report}");
    assert!(!out.join("records.jsonl").exists());

    fs::write(&recs, "{\"id\":\"a\",\"text\":\"x\",\"vec\":[1.0,0.0]}\n").unwrap();
    ok(&["ingest", "--records", s(&recs), "--dim", "2", "--out-dir", s(&out)]);
    assert!(out.join("records.jsonl").exists());
}
