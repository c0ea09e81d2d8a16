use std::path::Path;
use std::process::{Command, Output};

fn gpo(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpo")).args(args).env("GPO_OUTPUT_DIR", out_dir).output().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

const SMALL: &str = "[run]\nname = \"small\"\npreset = \"desk\"\nseeds = [3]\nalgorithms = [\"gpo_penalty\"]\n\n[train]\nenv = { name = \"tigerdoor_alt\" }\ntotal_timesteps = 6144\neval_episodes = 100\n";

#[test]
fn run_writes_logs_summary_and_params_then_eval_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out = gpo(&["run", &cfg], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let base = dir.path().join("small");
    let log = std::fs::read_to_string(base.join("gpo_penalty/seed3.csv")).unwrap();
    assert!(log.lines().next().unwrap().starts_with("iteration,"));
    assert!(log.lines().count() >= 2);
    let summary = std::fs::read_to_string(base.join("summary.csv")).unwrap();
    assert!(summary.starts_with("algorithm,seeds,final_return_mean,final_return_std"));

    let params = base.join("gpo_penalty/seed3.params").display().to_string();
    let out = gpo(&["eval", &params, "tigerdoor_alt", "--episodes", "50"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("episodes 50"));
}

#[test]
fn unknown_key_reports_position_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &SMALL.replace("eval_episodes", "eval_epsiodes"));
    let out = gpo(&["run", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 10"), "{err}");
    assert!(!dir.path().join("small").exists());
}

#[test]
fn empty_seed_list_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "empty.toml", &SMALL.replace("seeds = [3]", "seeds = []"));
    assert_eq!(gpo(&["run", &cfg], dir.path()).status.code(), Some(2));
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gpo(&["run", "/nonexistent/x.toml"], dir.path()).status.code(), Some(2));
}

#[test]
fn verify_flags_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let fast = ["verify", "--instances", "3", "--grad-seeds", "2", "--skip", "ratio_bound"];
    let ok = gpo(&fast, dir.path());
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    let mut faulty = fast.to_vec();
    faulty.extend(["--inject-fault", "gae-sign"]);
    let bad = gpo(&faulty, dir.path());
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("failing checks: gae"));
}

#[test]
fn verify_rejects_unknown_check() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gpo(&["verify", "--skip", "nope"], dir.path()).status.code(), Some(2));
}
