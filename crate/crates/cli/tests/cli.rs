use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lifebench"));
    c.arg("--jobs").arg("2");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Synthesizes, ingests and generates a small benchmark in a temp dir.
fn pipeline(total: usize) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_path_buf();
    let o = run(&["synth", "--users", "8", "--days", "21", "--seed", "3", "--out", "data"], &d);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["ingest", "--data", "data", "--db", "life.db"], &d);
    assert!(o.status.success(), "{}", stderr(&o));
    let total = total.to_string();
    let o = run(&["generate", "--db", "life.db", "--total", &total, "--seed", "5", "--out", "bench.jsonl"], &d);
    assert!(o.status.success(), "{}", stderr(&o));
    (dir, d)
}

#[test]
fn generate_then_validate() {
    let (_tmp, d) = pipeline(150);
    assert!(d.join("data/manifest.toml").exists());
    assert!(d.join("data/run_manifest.json").exists());
    assert!(d.join("bench.jsonl.manifest.json").exists());
    let o = run(&["validate", "--db", "life.db", "--bench", "bench.jsonl"], &d);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("150/150 verified"));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("bench.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "generate");
    assert_eq!(manifest["seeds"]["generate"], 5);
}

#[test]
fn validate_fails_on_tampered_ground_truth() {
    let (_tmp, d) = pipeline(40);
    let text = std::fs::read_to_string(d.join("bench.jsonl")).unwrap();
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let first = lines
        .iter_mut()
        .find(|v| v["ground_truth"]["type"] == "number")
        .expect("a numeric instance");
    let gt = first["ground_truth"]["value"].as_f64().unwrap();
    first["ground_truth"]["value"] = serde_json::json!(gt + 1000.0);
    let out: Vec<String> = lines.iter().map(|v| v.to_string()).collect();
    std::fs::write(d.join("bad.jsonl"), out.join("\n") + "\n").unwrap();
    let o = run(&["validate", "--db", "life.db", "--bench", "bad.jsonl"], &d);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("39/40 verified"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["generate", "--nope"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--nope"));
    let o = run(&["eval", "--mode", "xx"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = run(
        &["synth", "--users", "0", "--out", "d"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn dp_eval_records_and_replays() {
    let (_tmp, d) = pipeline(60);
    let o = run(
        &[
            "eval", "--mode", "dp", "--bench", "bench.jsonl", "--db", "life.db", "--backend", "oracle",
            "--record", "replay.jsonl", "--report", "a/report.json",
        ],
        &d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("Acc 100.00%  VA 100.00%  EX 100.00%  Acc|EX 100.00%"), "{}", stdout(&o));
    let o = run(
        &[
            "eval", "--mode", "dp", "--bench", "bench.jsonl", "--db", "life.db", "--backend", "scripted",
            "--replay", "replay.jsonl", "--report", "b/report.json",
        ],
        &d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let a = std::fs::read(d.join("a/report.predictions.jsonl")).unwrap();
    let b = std::fs::read(d.join("b/report.predictions.jsonl")).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        std::fs::read(d.join("a/report.json")).unwrap(),
        std::fs::read(d.join("b/report.json")).unwrap()
    );
    assert!(d.join("a/report.json.manifest.json").exists());
    assert!(d.join("a/report.facets.csv").exists());

    let o = run(
        &[
            "report", "--bench", "bench.jsonl", "--db", "life.db", "--predictions", "a/report.predictions.jsonl",
            "--out", "c.json",
        ],
        &d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(d.join("a/report.json")).unwrap(), std::fs::read(d.join("c.json")).unwrap());
}

#[test]
fn agent_modes() {
    let (_tmp, d) = pipeline(30);
    let o = run(
        &["eval", "--mode", "agent", "--bench", "bench.jsonl", "--db", "life.db", "--backend", "oracle", "--report", "ag.json"],
        &d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("Acc 100.00%"), "{}", stdout(&o));
    assert!(d.join("ag.traces.jsonl").exists());

    let o = run(
        &["eval", "--mode", "agent", "--bench", "bench.jsonl", "--db", "life.db", "--backend", "weak", "--report", "x.json"],
        &d,
    );
    assert_eq!(o.status.code(), Some(2));

    let first: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(d.join("bench.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    let q = first["question"].as_str().unwrap();
    let o = run(
        &["agent", "--db", "life.db", "--query", q, "--backend", "oracle", "--bench", "bench.jsonl", "--trace", "t.jsonl"],
        &d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("ANSWER: "));
    assert!(d.join("t.jsonl").exists());

    let o = run(&["agent", "--db", "life.db", "--query", "  ", "--backend", "oracle", "--bench", "bench.jsonl"], &d);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn remote_without_key_fails_before_network() {
    let (_tmp, d) = pipeline(10);
    let o = bin()
        .args([
            "eval", "--mode", "dp", "--bench", "bench.jsonl", "--db", "life.db", "--backend", "remote",
            "--base-url", "http://127.0.0.1:9", "--model", "m", "--api-key-env", "LIFEBENCH_TEST_UNSET_KEY",
            "--report", "r.json",
        ])
        .env_remove("LIFEBENCH_TEST_UNSET_KEY")
        .current_dir(&d)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).to_lowercase().contains("lifebench_test_unset_key"), "{}", stderr(&o));
}
