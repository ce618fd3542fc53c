use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn stagebc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stagebc"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn error_line(out: &Output) -> Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().last().expect("stderr carries an error line");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not json: {line}"))
}

fn assert_fails(out: &Output, kind: &str, code: i32) {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let e = error_line(out);
    assert_eq!(e["error"], kind);
    assert_eq!(e["code"], code);
    assert!(e["message"].is_string());
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn bad_usage_reports_json_and_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_fails(&stagebc(&["no-such-command"], dir.path()), "usage", 2);
    assert_fails(&stagebc(&["gen-demos", "--n", "many"], dir.path()), "usage", 2);
}

#[test]
fn missing_inputs_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = stagebc(&["train", "--demos", "nope.bin", "--epochs", "1"], dir.path());
    assert_fails(&out, "missing_file", 3);
    let out = stagebc(&["--env-file", "env.json", "gen-demos", "--n", "2"], dir.path());
    assert_fails(&out, "missing_file", 3);
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| stagebc(args, d);

    let text = stdout(&run(&["--sequential", "gen-demos", "--n", "4", "--seed", "3", "--out", "demos.bin"]));
    assert!(text.contains("4 demos"), "{text}");
    let manifest = json(&d.join("demos.bin.manifest.json"));
    assert_eq!(manifest["config"]["command"], "gen-demos");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);

    stdout(&run(&[
        "train", "--demos", "demos.bin", "--variant", "stage", "--h", "5", "--epochs", "1", "--save-dataset",
        "ds5.bin", "--out", "stage.bin",
    ]));
    stdout(&run(&["train", "--demos", "demos.bin", "--variant", "plain", "--h", "5", "--epochs", "1", "--out", "plain.bin"]));
    assert!(json(&d.join("stage.bin.manifest.json"))["config"]["inputs"].is_array());

    // A dataset chunked at H=5 cannot train an H=10 model.
    let out = run(&["train", "--dataset", "ds5.bin", "--h", "10", "--epochs", "1", "--out", "x.bin"]);
    assert_fails(&out, "provenance", 4);
    stdout(&run(&["train", "--dataset", "ds5.bin", "--h", "5", "--epochs", "1", "--out", "y.bin"]));

    let eval = [
        "eval", "--checkpoint", "stage.bin", "--checkpoint", "plain.bin", "--demos", "demos.bin", "--n-eval", "2",
        "--budget", "40",
    ];
    let mut t1 = eval.to_vec();
    t1.extend(["--paper-table", "1", "--out", "t1.json"]);
    let table = stdout(&run(&t1));
    assert!(table.starts_with("Model"), "{table}");
    assert!(table.contains("SR(%)") && table.contains("published"));
    assert!(table.contains("StageACT") && table.contains("ACT"), "{table}");
    let env = json(&d.join("t1.json"));
    assert_eq!(env["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(env["report"]["rows"].as_array().unwrap().len(), 2);

    let mut t2 = eval.to_vec();
    t2.extend(["--paper-table", "2", "--out", "t2.json"]);
    let funnel = stdout(&run(&t2));
    assert!(funnel.lines().next().unwrap().contains("S5"), "{funnel}");
    assert!(!funnel.contains("E_root"));

    let mut t3 = eval.to_vec();
    t3.extend(["--paper-table", "3"]);
    assert_fails(&run(&t3), "usage", 2);

    // Checkpoints must be evaluated against the archive they came from.
    stdout(&run(&["--sequential", "gen-demos", "--n", "4", "--seed", "4", "--out", "other.bin"]));
    let out = run(&["eval", "--checkpoint", "stage.bin", "--demos", "other.bin", "--n-eval", "1"]);
    assert_fails(&out, "provenance", 4);

    let out = run(&["ablate", "--checkpoint", "stage.bin", "--demos", "demos.bin", "--paper-table", "1"]);
    assert_fails(&out, "usage", 2);

    let text = stdout(&run(&[
        "rollout", "--checkpoint", "stage.bin", "--source", "constant:S1", "--budget", "30", "--out", "ep.json",
    ]));
    assert!(text.contains("30 steps") || text.contains("steps"), "{text}");
    let ep = json(&d.join("ep.json"));
    assert_eq!(ep["config"]["command"], "rollout");

    let out = run(&["rollout", "--checkpoint", "stage.bin", "--source", "constant:S7"]);
    assert_eq!(out.status.code(), Some(7), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.bin"), b"definitely not a checkpoint").unwrap();
    let out = stagebc(&["rollout", "--checkpoint", "bad.bin"], dir.path());
    assert!(!out.status.success());
    let e = error_line(&out);
    assert!(e["error"] == "corruption" || e["error"] == "version", "{e}");
}
