use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
stage1_episodes = 2
stage2_episodes = 2
epochs_per_episode = 1
plan.n_courses = 2
";

fn causalwm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_causalwm"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.cfg");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_outputs_and_eval_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let res = causalwm(&[
        "run",
        "--config",
        &cfg,
        "--seeds",
        "2",
        "--conditions",
        "random,ambiguity",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let records = std::fs::read_to_string(out.join("records.csv")).unwrap();
    let mut lines = records.lines();
    assert_eq!(
        lines.next(),
        Some("condition,seed,stage,episode,edge_from,edge_to,probability")
    );
    // learnable edges: 8 inputs x 4 outputs minus self-edges, then 9 x 5 minus self-edges
    assert_eq!(lines.count(), 2 * 2 * (2 * 28 + 2 * 40));
    assert!(out.join("summary.csv").exists());
    assert!(out.join("config.echo").exists());

    let eval = causalwm(&["eval", "--records", out.join("records.csv").to_str().unwrap()]);
    assert!(eval.status.success());
    let summary = String::from_utf8(eval.stdout).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("ambiguity,2,C,H")));
    assert!(summary.lines().any(|l| l.starts_with("random,2,C,H")));
}

#[test]
fn unknown_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "stage1_episodes = 2\nlearning_rate = 0.1\n");
    let res = causalwm(&["run", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("learning_rate"));
}

#[test]
fn bad_condition_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let res = causalwm(&["run", "--config", &cfg, "--conditions", "greedy"]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn corrupted_records_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.csv");
    std::fs::write(&path, "condition,seed,stage\nrandom,0,2\n").unwrap();
    let res = causalwm(&["eval", "--records", path.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 1"));
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let res = causalwm(&[
        "run",
        "--config",
        &cfg,
        "--seeds",
        "1",
        "--out",
        blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn print_truth_lists_stage_one_edges() {
    let res = causalwm(&["print-truth", "--stage", "1"]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "input,X,Y,Xa,C");
    assert_eq!(lines.len(), 1 + 8);
    assert!(lines.contains(&"X,1,0,0,1"));
    assert!(lines.contains(&"A_up,0,1,0,0"));
}

#[test]
fn print_truth_rejects_unknown_stage() {
    let res = causalwm(&["print-truth", "--stage", "3"]);
    assert!(!res.status.success());
}
