//! End-to-end tests of the `papaya` binary: exit codes, output formats, and
//! the corpus runner.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_papaya"))
}

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    cmd.env_remove("PAPAYA_COLOR");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn papaya")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn check_accepts_the_bank_account_program() {
    let p = corpus_dir().join("bankaccount.pap");
    let out = run(&["check", p.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0);
}

#[test]
fn check_rejects_the_swapped_variant_naming_get_money() {
    let p = corpus_dir().join("bankaccount_swapped.pap");
    let out = run(&["check", p.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("getMoney"));
    assert!(stderr.contains("MethodNotAvailable"));
}

#[test]
fn check_missing_file_exits_2() {
    let out = run(&["check", "no_such_file.pap"], &[]);
    assert_eq!(code(&out), 2);
}

#[test]
fn check_parse_failure_exits_2() {
    let p = corpus_dir().join("reject_syntax.pap");
    let out = run(&["check", p.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 2);
}

#[test]
fn check_json_emits_valid_records() {
    let p = corpus_dir().join("bankaccount_swapped.pap");
    let out = run(&["check", p.to_str().unwrap(), "--json"], &[]);
    assert_eq!(code(&out), 1);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let mut saw = 0;
    for line in stdout.lines() {
        let v: serde_json::Value = serde_json::from_str(line).expect("valid json");
        assert_eq!(v["severity"], "error");
        assert!(v["span"]["line"].is_number());
        saw += 1;
    }
    assert!(saw >= 1);
}

#[test]
fn check_trace_rules_prints_rule_lines() {
    let p = corpus_dir().join("bankaccount.pap");
    let out = run(&["check", p.to_str().unwrap(), "--trace-rules"], &[]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().filter(|l| l.starts_with("RULE ")).count() > 20);
    assert!(stdout.contains("RULE Main"));
}

#[test]
fn run_dumps_the_final_heap() {
    let p = corpus_dir().join("bankaccount.pap");
    let out = run(&["run", p.to_str().unwrap(), "--dump-heap"], &[]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("o1 ↦ (BankAccount, {amount ↦ 105"));
}

#[test]
fn run_monitor_only_catches_the_swap_at_get_money() {
    let p = corpus_dir().join("bankaccount_swapped.pap");
    let out = run(&["run", p.to_str().unwrap(), "--monitor-only"], &[]);
    assert_eq!(code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("getMoney"));
}

#[test]
fn run_fuel_exhaustion_exits_1_with_message() {
    let p = fixture("loop_forever.pap");
    let out = run(&["run", p.to_str().unwrap(), "--fuel", "100"], &[]);
    assert_eq!(code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("fuel exhausted"));
}

#[test]
fn run_trace_is_byte_stable() {
    let p = corpus_dir().join("loop_simple.pap");
    let a = run(&["run", p.to_str().unwrap(), "--trace"], &[]);
    let b = run(&["run", p.to_str().unwrap(), "--trace"], &[]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let stdout = String::from_utf8_lossy(&a.stdout);
    assert!(stdout.lines().any(|l| l.contains("\"label\":\"o1#again\"")));
}

#[test]
fn corpus_runs_green_and_is_order_stable() {
    let out = run(&["corpus", corpus_dir().to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("0 failed"));
}

#[test]
fn corpus_flags_unexpected_acceptance() {
    let dir = std::env::temp_dir().join(format!("papaya-corpus-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("ok.pap"), "main { unit }\n").unwrap();
    std::fs::write(dir.join("ok.expect"), "reject: MethodNotAvailable\n").unwrap();
    let out = run(&["corpus", dir.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL (accepted)"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn corpus_empty_dir_reports_zero_and_succeeds() {
    let dir = std::env::temp_dir().join(format!("papaya-empty-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let out = run(&["corpus", dir.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 passed, 0 failed, 0 total"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn color_toggle_controls_ansi() {
    let p = corpus_dir().join("bankaccount_swapped.pap");
    let plain = run(&["check", p.to_str().unwrap()], &[("PAPAYA_COLOR", "0")]);
    assert!(!String::from_utf8_lossy(&plain.stderr).contains("\x1b["));
    let colored = run(&["check", p.to_str().unwrap()], &[("PAPAYA_COLOR", "1")]);
    assert!(String::from_utf8_lossy(&colored.stderr).contains("\x1b[31m"));
}
