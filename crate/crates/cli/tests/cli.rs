use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reasongraph::gateway::{write_fixture, Gateway, GatewayConfig, GatewayMode};
use serde_json::Value;
use tempfile::TempDir;

const G1: &str = r#"{"question_id":"g1","question":"Q","gold_answer":"A1","chains":[{"steps":["s11","s12"],"answer":"A1"},{"steps":["s11","s22"],"answer":"A1"},{"steps":["s31"],"answer":"A2"}]}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reasongraph"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Five questions whose self-consistency confidence separates right from
/// wrong perfectly.
fn separable_dataset(dir: &Path) -> PathBuf {
    let mut lines = Vec::new();
    for q in 0..5 {
        let (answers, gold): (&[&str], &str) = if q % 2 == 0 {
            (&["7", "7", "7", "8"], "7")
        } else {
            (&["1", "2", "3", "2"], "9")
        };
        let chains: Vec<String> = answers
            .iter()
            .enumerate()
            .map(|(i, a)| format!(r#"{{"steps":["q{q} step a{i}","q{q} shared step"],"answer":"{a}"}}"#))
            .collect();
        lines.push(format!(
            r#"{{"question_id":"q{q}","question":"question {q}","gold_answer":"{gold}","chains":[{}]}}"#,
            chains.join(",")
        ));
    }
    write(dir, "data.jsonl", &(lines.join("\n") + "\n"))
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["score", "--no-such-flag"])), 1);
    assert_eq!(code(&run(&[])), 1);
    let out = run(&["score", "--out", "x"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn score_g1_with_all_estimators() {
    let tmp = TempDir::new().unwrap();
    let data = write(tmp.path(), "g1.jsonl", G1);
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "score", "--dataset", data.to_str().unwrap(), "--out", out_dir.to_str().unwrap(),
        "--estimators", "all", "--match", "exact", "--seed", "5",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let scores = read_json(&out_dir.join("scores.json"));
    assert_eq!(scores["tool"], "reasongraph");
    assert_eq!(scores["seed"], 5);
    assert_eq!(scores["config"]["params"]["seed"], 5);
    let reports = scores["questions"][0]["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 5);
    let pathconv = reports.iter().find(|r| r["estimator"] == "pathconv_exact").unwrap();
    assert_eq!(pathconv["scores"]["a1"], 0.8);
}

#[test]
fn missing_dataset_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let out = run(&["score", "--dataset", "/nonexistent/data.jsonl", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nonexistent"));
}

#[test]
fn score_and_evaluate_are_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let data = separable_dataset(tmp.path());
    let out_dir = tmp.path().join("run");
    let (d, o) = (data.to_str().unwrap(), out_dir.to_str().unwrap());
    let mut snapshots = Vec::new();
    for jobs in ["1", "4"] {
        let s = run(&["--jobs", jobs, "score", "--dataset", d, "--out", o, "--estimators",
            "selfcons,pathconv_sampled,pathweight_sampled", "--seed", "11", "--samples", "5000"]);
        assert_eq!(code(&s), 0, "{}", stderr(&s));
        let e = run(&["evaluate", "--dataset", d, "--out", o]);
        assert_eq!(code(&e), 0, "{}", stderr(&e));
        snapshots.push(
            ["scores.json", "metrics.json", "metrics.csv"].map(|f| fs::read(out_dir.join(f)).unwrap()),
        );
    }
    assert_eq!(snapshots[0], snapshots[1]);
}

#[test]
fn evaluate_perfect_estimator_and_table() {
    let tmp = TempDir::new().unwrap();
    let data = separable_dataset(tmp.path());
    let (d, o) = (data.to_str().unwrap(), tmp.path().to_str().unwrap());
    assert_eq!(code(&run(&["score", "--dataset", d, "--out", o, "--estimators", "selfcons"])), 0);
    let out = run(&["evaluate", "--dataset", d, "--out", o, "--table"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.lines().next().unwrap().contains("AUROC"));
    assert!(table.contains("Brier") && table.contains("ECE"));
    assert!(table.lines().any(|l| l.starts_with("selfcons") && l.contains("100.0")), "{table}");
    let metrics = read_json(&tmp.path().join("metrics.json"));
    assert_eq!(metrics["metrics"][0]["auroc"], 1.0);
}

#[test]
fn evaluate_empty_dataset_fails() {
    let tmp = TempDir::new().unwrap();
    let data = write(tmp.path(), "empty.jsonl", "");
    let (d, o) = (data.to_str().unwrap(), tmp.path().to_str().unwrap());
    assert_eq!(code(&run(&["score", "--dataset", d, "--out", o])), 0);
    let out = run(&["evaluate", "--dataset", d, "--out", o]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn single_class_auroc_is_reported() {
    let tmp = TempDir::new().unwrap();
    let data = write(tmp.path(), "g1.jsonl", G1);
    let (d, o) = (data.to_str().unwrap(), tmp.path().to_str().unwrap());
    assert_eq!(code(&run(&["score", "--dataset", d, "--out", o, "--estimators", "selfcons"])), 0);
    let out = run(&["evaluate", "--dataset", d, "--out", o]);
    assert_eq!(code(&out), 0);
    assert!(stderr(&out).contains("AUROC undefined"));
    assert!(read_json(&tmp.path().join("metrics.json"))["metrics"][0]["auroc"].is_null());
}

fn routing_setup(tmp: &Path, identity: bool) -> (PathBuf, PathBuf) {
    let data = separable_dataset(tmp);
    let o = tmp.to_str().unwrap();
    assert_eq!(code(&run(&["score", "--dataset", data.to_str().unwrap(), "--out", o, "--estimators", "selfcons"])), 0);
    let lines: Vec<String> = (0..5)
        .map(|q| {
            let base = q % 2 == 0;
            let after = if identity { base } else { true };
            format!(r#"{{"question_id":"q{q}","base_correct":{base},"intervened_correct":{after}}}"#)
        })
        .collect();
    let fixtures = write(tmp, "outcomes.jsonl", &lines.join("\n"));
    (tmp.join("scores.json"), fixtures)
}

#[test]
fn route_reports_columns() {
    let tmp = TempDir::new().unwrap();
    let (scores, fixtures) = routing_setup(tmp.path(), false);
    let out = run(&[
        "route", "--scores", scores.to_str().unwrap(), "--fixtures", fixtures.to_str().unwrap(),
        "--out", tmp.path().to_str().unwrap(), "--estimator", "selfcons", "-k", "20,100",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&tmp.path().join("routing.json"));
    let columns = report["routing"]["columns"].as_array().unwrap();
    assert_eq!(report["routing"]["base"], 0.6);
    // least confident question is wrong, so fixing it adds one
    assert_eq!(columns[0]["after_accuracy"], 0.8);
    assert_eq!(columns[1]["after_accuracy"], 1.0);
}

#[test]
fn route_identity_fixture_has_zero_delta() {
    let tmp = TempDir::new().unwrap();
    let (scores, fixtures) = routing_setup(tmp.path(), true);
    let out = run(&[
        "route", "--scores", scores.to_str().unwrap(), "--fixtures", fixtures.to_str().unwrap(),
        "--out", tmp.path().to_str().unwrap(), "--estimator", "selfcons",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&tmp.path().join("routing.json"));
    for c in report["routing"]["columns"].as_array().unwrap() {
        assert_eq!(c["delta"], 0.0);
    }
}

#[test]
fn route_missing_fixture_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let (scores, _) = routing_setup(tmp.path(), true);
    let partial = write(tmp.path(), "partial.jsonl", r#"{"question_id":"q0","base_correct":true,"intervened_correct":true}"#);
    let out = run(&[
        "route", "--scores", scores.to_str().unwrap(), "--fixtures", partial.to_str().unwrap(),
        "--out", tmp.path().to_str().unwrap(), "--estimator", "selfcons",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("no outcome fixture"));
}

fn gateway_fixtures(dir: &Path, question: &str, replies: &[&str]) {
    let config = GatewayConfig { mode: GatewayMode::Fixture, fixture_dir: Some(dir.into()), ..Default::default() };
    let gateway = Gateway::from_config(config).unwrap();
    for (slot, reply) in replies.iter().enumerate() {
        write_fixture(dir, &gateway.generation_request(question, slot as u32), reply).unwrap();
    }
}

#[test]
fn sample_in_fixture_mode() {
    let tmp = TempDir::new().unwrap();
    let fx = tmp.path().join("fixtures");
    gateway_fixtures(&fx, "What is 2+3?", &[
        "Step 1: Add 2 and 3.\nFinal Answer: \\boxed{5}",
        "Step 1: Count up from 2.\nStep 2: Reach 5.\nFinal Answer: \\boxed{5}",
        "Step 1: Guess.\nFinal Answer: \\boxed{6}",
    ]);
    let questions = write(tmp.path(), "questions.jsonl", r#"{"question_id":"p1","question":"What is 2+3?","gold_answer":"5"}"#);
    let out_dir = tmp.path().join("sampled");
    let args = [
        "sample", "--questions", questions.to_str().unwrap(), "--out", out_dir.to_str().unwrap(),
        "-n", "3", "--mode", "fixture", "--fixture-dir", fx.to_str().unwrap(),
    ];
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let first = fs::read_to_string(out_dir.join("dataset.jsonl")).unwrap();
    let record: Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(record["chains"].as_array().unwrap().len(), 3);
    assert_eq!(record["chains"][1]["steps"].as_array().unwrap().len(), 2);
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(fs::read_to_string(out_dir.join("dataset.jsonl")).unwrap(), first);

    // a fourth sample has no fixture: gateway error
    let mut more = args.to_vec();
    more[6] = "4";
    assert_eq!(code(&run(&more)), 3);

    // output directory below a regular file cannot be created
    let blocker = write(tmp.path(), "blocker", "");
    let bad_out = blocker.join("out");
    let mut bad = args.to_vec();
    bad[4] = bad_out.to_str().unwrap();
    let out = run(&bad);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn dump_graph_lists_g1() {
    let tmp = TempDir::new().unwrap();
    let data = write(tmp.path(), "g1.jsonl", G1);
    let d = data.to_str().unwrap();
    let out = run(&["dump-graph", "--dataset", d, "--question-id", "g1", "--match", "exact"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let dump: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(dump["graph"]["nodes"].as_array().unwrap().len(), 8);
    let inter = dump["graph"]["edges"].as_array().unwrap().iter().filter(|e| e["label"] == "inter").count();
    assert_eq!(inter, 2);

    let out = run(&["dump-graph", "--dataset", d, "--question-id", "g1", "--match", "exact", "--merged"]);
    let dump: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(dump["graph"]["nodes"].as_array().unwrap().len(), 7);

    assert_eq!(code(&run(&["dump-graph", "--dataset", d, "--question-id", "nope"])), 2);
}

#[test]
fn flags_override_the_config_file() {
    let tmp = TempDir::new().unwrap();
    let data = write(tmp.path(), "g1.jsonl", G1);
    let out_dir = tmp.path().join("out");
    let config = write(
        tmp.path(),
        "run.toml",
        &format!(
            "dataset = {:?}\nout_dir = {:?}\nestimators = [\"selfcons\", \"cenconf\"]\n[params]\nalpha = 0.2\nseed = 3\n",
            data.to_str().unwrap(),
            out_dir.to_str().unwrap()
        ),
    );
    let out = run(&["--config", config.to_str().unwrap(), "score", "--seed", "9"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let scores = read_json(&out_dir.join("scores.json"));
    assert_eq!(scores["config"]["params"]["alpha"], 0.2);
    assert_eq!(scores["config"]["params"]["seed"], 9);
    assert_eq!(scores["questions"][0]["reports"].as_array().unwrap().len(), 2);

    let bad = write(tmp.path(), "bad.toml", "alpha = 0.2\n");
    assert_eq!(code(&run(&["--config", bad.to_str().unwrap(), "score"])), 2);
}
