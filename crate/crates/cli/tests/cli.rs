// SPDX-License-Identifier: MIT OR Apache-2.0

//! The binary end to end: subcommands, the stdio bridge and exit codes.

use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_arcjsd");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const CONTEXT: &str = "Alice lives in Paris. Bob likes tea. The sky is blue.";

#[test]
fn inline_attribution_prints_a_report() {
    let o = run(&["attribute", "--context", CONTEXT, "--query", "Where does Alice live?", "--max-new-tokens", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("== Context =="));
    assert!(text.contains("== Top-1 source =="));
}

#[test]
fn html_report_goes_to_the_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.html");
    let o = run(&[
        "attribute",
        "--context",
        CONTEXT,
        "--query",
        "Where does Alice live?",
        "--response",
        "Paris.",
        "--report",
        "html",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let html = std::fs::read_to_string(out).unwrap();
    assert!(html.starts_with("<!DOCTYPE html>"));
    assert_eq!(html.matches("<mark ").count(), 3);
}

#[test]
fn stdio_bridge_gives_the_same_report_as_in_process() {
    let args = ["--context", CONTEXT, "--query", "Who likes tea?", "--response", "Bob."];
    let local = run(&[&["attribute"][..], &args].concat());
    let bridge_spec = format!("stdio:{BIN} serve-mini");
    let remote = run(&[&["attribute", "--backend", bridge_spec.as_str()][..], &args].concat());
    assert!(remote.status.success(), "{}", String::from_utf8_lossy(&remote.stderr));
    assert_eq!(stdout(&local), stdout(&remote));
}

#[test]
fn saved_model_round_trips_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.arcm");
    assert!(run(&["serve-mini", "--seed", "3", "--save", model.to_str().unwrap()]).status.success());
    let args = ["attribute", "--context", CONTEXT, "--query", "Q?", "--response", "A."];
    let seeded = run(&[&args[..], &["--seed", "3"]].concat());
    let loaded = run(&[&args[..], &["--model", model.to_str().unwrap()]].concat());
    assert_eq!(stdout(&seeded), stdout(&loaded));
}

#[test]
fn dataset_mode_writes_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    std::fs::write(
        &data,
        "{\"id\":\"x\",\"context\":\"Ann reads. Bo sings.\",\"question\":\"Who sings?\",\"answer\":\"Bo\"}\n",
    )
    .unwrap();
    let o = run(&["attribute", "--dataset", data.to_str().unwrap(), "--max-new-tokens", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let line: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(line["sample_id"], "x");
    assert_eq!(line["calls"], 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("arc-jsd: 1 samples"));
}

#[test]
fn bench_reports_the_call_ratio() {
    let o = run(&["bench", "--samples", "1", "--sentences", "4", "--n-masks", "8", "--max-new-tokens", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("call ratio (surrogate / arc-jsd): 1.800"), "{}", stdout(&o));
}

#[test]
fn layer_analyses_run_on_the_mini_model() {
    let base = ["--context", CONTEXT, "--query", "Who likes tea?", "--response", "Bob."];
    let o = run(&[&["analyze-components"][..], &base, &["--top-n", "3"]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&[&["semantic-gain"][..], &base].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("layer\tattn_gain\tmlp_gain"));
    let o = run(&[&["verify-consensus"][..], &base].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("component\tmetric\trho"));
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    // configuration: unknown backend, bad format name, missing input
    assert_eq!(run(&["attribute", "--backend", "gpu", "--context", "A.", "--query", "q"]).status.code(), Some(2));
    assert_eq!(run(&["attribute", "--dataset", "x", "--format", "squad"]).status.code(), Some(2));
    assert_eq!(run(&["attribute"]).status.code(), Some(2));
    // backend: nothing listens on the port
    let o = run(&["attribute", "--backend", "bridge:127.0.0.1:1", "--context", "A.", "--query", "q"]);
    assert_eq!(o.status.code(), Some(3));
    // evaluation: the query occurs inside the context
    let o = run(&["attribute", "--context", "Who sings? Bo sings.", "--query", "Who sings?"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}
