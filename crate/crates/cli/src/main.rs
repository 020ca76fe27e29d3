//! Command-line front end: `check`, `run`, and `corpus`.
//!
//! Exit codes: 0 on success, 1 for type or monitor errors (including fuel
//! exhaustion and unfinished protocols), 2 for unreadable files, parse
//! failures, and internal errors. `PAPAYA_COLOR=1` enables ANSI colors,
//! `PAPAYA_COLOR=0` (or unset) disables them.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use papaya_core::ast::Program;
use papaya_core::checker::{self, TypeDiagnostic};
use papaya_core::diag::{Diagnostic, FileId};
use papaya_core::{interp, lower, parser, wf, DEFAULT_FUEL};

#[derive(Parser)]
#[command(name = "papaya", version, about = "Typestate checker and interpreter for .pap programs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse, desugar, and typecheck a program.
    Check {
        path: PathBuf,
        /// Print one line per applied typing rule.
        #[arg(long)]
        trace_rules: bool,
        /// Emit diagnostics and status as JSON lines on stdout.
        #[arg(long)]
        json: bool,
        /// Print the final typing environment on acceptance.
        #[arg(long)]
        print_env: bool,
    },
    /// Execute a program under the runtime protocol monitor.
    Run {
        path: PathBuf,
        /// Step budget.
        #[arg(long, default_value_t = DEFAULT_FUEL)]
        fuel: u64,
        /// Print one JSON record per executed step on stdout.
        #[arg(long)]
        trace: bool,
        /// Skip static checking and rely on the monitor alone. Unsound by
        /// design; exists to demonstrate dynamic detection of protocol
        /// violations.
        #[arg(long)]
        monitor_only: bool,
        /// Print the final heap.
        #[arg(long)]
        dump_heap: bool,
    },
    /// Run every expectation in a directory of `.pap` + `.expect` files.
    Corpus { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Check { path, trace_rules, json, print_env } => {
            cmd_check(&path, trace_rules, json, print_env)
        }
        Cmd::Run { path, fuel, trace, monitor_only, dump_heap } => {
            cmd_run(&path, fuel, trace, monitor_only, dump_heap)
        }
        Cmd::Corpus { dir } => cmd_corpus(&dir),
    };
    ExitCode::from(code)
}

fn color_enabled() -> bool {
    std::env::var("PAPAYA_COLOR").is_ok_and(|v| v == "1")
}

fn paint_error(text: &str) -> String {
    if color_enabled() {
        // Highlight the severity word only.
        text.replacen(": error:", ": \x1b[31merror\x1b[0m:", 1)
    } else {
        text.to_string()
    }
}

fn report_diags(diags: &[Diagnostic], file: &str, json: bool) {
    for d in diags {
        if json {
            println!("{}", d.to_json(file));
        } else {
            eprintln!("{}", paint_error(&d.render(file)));
        }
    }
}

fn report_type_diags(diags: &[TypeDiagnostic], file: &str, json: bool) {
    let rendered: Vec<Diagnostic> = diags.iter().map(|d| d.to_diagnostic()).collect();
    report_diags(&rendered, file, json);
}

enum FrontEndError {
    /// Unreadable file or parse failure: exit 2.
    Parse(Vec<Diagnostic>),
    /// Rejected by desugaring or well-formedness: exit 1.
    Rejected(Vec<Diagnostic>),
}

fn front_end(path: &Path) -> Result<Program, FrontEndError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        FrontEndError::Parse(vec![Diagnostic::error(
            "Io",
            papaya_core::diag::Span::synthetic(),
            format!("cannot read {}: {e}", path.display()),
        )])
    })?;
    let surface = parser::parse(&text, FileId(0)).map_err(FrontEndError::Parse)?;
    let mut program = lower::lower(&surface).map_err(FrontEndError::Rejected)?;
    lower::resolve_named_types(&mut program);
    let diags = wf::well_formed_program(&program);
    if diags.is_empty() {
        Ok(program)
    } else {
        Err(FrontEndError::Rejected(diags))
    }
}

fn cmd_check(path: &Path, trace_rules: bool, json: bool, print_env: bool) -> u8 {
    let file = path.display().to_string();
    let program = match front_end(path) {
        Ok(p) => p,
        Err(FrontEndError::Parse(ds)) => {
            report_diags(&ds, &file, json);
            return 2;
        }
        Err(FrontEndError::Rejected(ds)) => {
            report_diags(&ds, &file, json);
            return 1;
        }
    };
    match checker::check_program(&program) {
        Ok(report) => {
            if trace_rules {
                for t in &report.trace {
                    println!("{}", t.render());
                }
            }
            if print_env {
                println!("{}", report.final_env);
            }
            if json {
                println!("{}", serde_json::json!({ "status": "ok", "objects": report.final_env.len() }));
            } else {
                eprintln!("ok: {} objects, all protocols finished", report.final_env.len());
            }
            0
        }
        Err(diags) => {
            report_type_diags(&diags, &file, json);
            1
        }
    }
}

fn cmd_run(path: &Path, fuel: u64, trace: bool, monitor_only: bool, dump_heap: bool) -> u8 {
    let file = path.display().to_string();
    let program = match front_end(path) {
        Ok(p) => p,
        Err(FrontEndError::Parse(ds)) => {
            report_diags(&ds, &file, false);
            return 2;
        }
        Err(FrontEndError::Rejected(ds)) => {
            report_diags(&ds, &file, false);
            return 1;
        }
    };
    if !monitor_only {
        if let Err(diags) = checker::check_program(&program) {
            report_type_diags(&diags, &file, false);
            return 1;
        }
    }
    match interp::run(&program, fuel) {
        Ok(report) => {
            if trace {
                for r in &report.trace {
                    println!("{}", serde_json::to_string(r).expect("trace record"));
                }
            }
            if dump_heap {
                println!("{}", report.final_config.heap);
            }
            if report.completed {
                eprintln!("ok: terminated after {} steps, all protocols complete", report.steps);
                0
            } else {
                let unfinished: Vec<String> = report
                    .monitor
                    .iter()
                    .filter(|(_, u)| !papaya_core::usage::terminated(u).unwrap_or(false))
                    .map(|(o, u)| format!("{o} in state {u}"))
                    .collect();
                eprintln!("error: protocols not completed: {}", unfinished.join("; "));
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[derive(PartialEq)]
enum Outcome {
    Pass,
    Fail(String),
}

fn cmd_corpus(dir: &Path) -> u8 {
    let mut entries: Vec<PathBuf> = match std::fs::read_dir(dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "pap"))
            .collect(),
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", dir.display());
            return 2;
        }
    };
    entries.sort();

    let mut passed = 0usize;
    let mut failed = 0usize;
    for path in &entries {
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let expect_path = path.with_extension("expect");
        let expectation = match std::fs::read_to_string(&expect_path) {
            Ok(t) => t.lines().next().unwrap_or_default().trim().to_string(),
            Err(_) => {
                println!("{name:<36} ?            FAIL (missing .expect)");
                failed += 1;
                continue;
            }
        };
        let outcome = run_expectation(path, &expectation);
        match outcome {
            Outcome::Pass => {
                println!("{name:<36} {expectation:<24} pass");
                passed += 1;
            }
            Outcome::Fail(why) => {
                println!("{name:<36} {expectation:<24} FAIL ({why})");
                failed += 1;
            }
        }
    }
    println!("corpus: {passed} passed, {failed} failed, {} total", passed + failed);
    if failed == 0 {
        0
    } else {
        1
    }
}

/// Every rejection kind produced by the pipeline for one program, in order.
fn rejection_kinds(path: &Path) -> Result<Vec<String>, Vec<String>> {
    match front_end(path) {
        Ok(program) => match checker::check_program(&program) {
            Ok(_) => Ok(vec![]),
            Err(ds) => Ok(ds.iter().map(|d| d.kind.name().to_string()).collect()),
        },
        Err(FrontEndError::Parse(ds)) | Err(FrontEndError::Rejected(ds)) => {
            Ok(ds.iter().map(|d| d.rule.clone()).collect())
        }
    }
}

fn run_expectation(path: &Path, expectation: &str) -> Outcome {
    if expectation == "accept" {
        return match rejection_kinds(path) {
            Ok(kinds) if kinds.is_empty() => Outcome::Pass,
            Ok(kinds) => Outcome::Fail(format!("rejected with {}", kinds.join(", "))),
            Err(_) => Outcome::Fail("internal".into()),
        };
    }
    if let Some(kind) = expectation.strip_prefix("reject:") {
        let kind = kind.trim();
        return match rejection_kinds(path) {
            Ok(kinds) if kinds.iter().any(|k| k == kind) => Outcome::Pass,
            Ok(kinds) if kinds.is_empty() => Outcome::Fail("accepted".into()),
            Ok(kinds) => Outcome::Fail(format!("got {}", kinds.join(", "))),
            Err(_) => Outcome::Fail("internal".into()),
        };
    }
    if let Some(trace_file) = expectation.strip_prefix("run:") {
        let trace_path = path.parent().unwrap_or(Path::new(".")).join(trace_file.trim());
        let expected = match std::fs::read_to_string(&trace_path) {
            Ok(t) => t,
            Err(e) => return Outcome::Fail(format!("cannot read trace: {e}")),
        };
        let program = match front_end(path) {
            Ok(p) => p,
            Err(_) => return Outcome::Fail("front end rejected".into()),
        };
        if checker::check_program(&program).is_err() {
            return Outcome::Fail("rejected".into());
        }
        let report = match interp::run(&program, DEFAULT_FUEL) {
            Ok(r) => r,
            Err(e) => return Outcome::Fail(format!("run failed: {e}")),
        };
        if !report.completed {
            return Outcome::Fail("protocols not completed".into());
        }
        let mut got = String::new();
        for r in &report.trace {
            got.push_str(&serde_json::to_string(r).expect("trace record"));
            got.push('\n');
        }
        if got == expected {
            Outcome::Pass
        } else {
            Outcome::Fail("trace differs".into())
        }
    } else {
        Outcome::Fail(format!("unknown expectation `{expectation}`"))
    }
}
