// Each test target uses a different subset of these helpers.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use papaya_core::ast::Program;
use papaya_core::diag::FileId;

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

pub fn load(name: &str) -> Program {
    let path = corpus_dir().join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("read {path:?}: {e}"));
    papaya_core::compile(&text, FileId(0)).unwrap_or_else(|ds| {
        panic!(
            "{name} failed to compile: {}",
            ds.iter().map(|d| d.render(name)).collect::<Vec<_>>().join("\n")
        )
    })
}

/// Every corpus program expected to be accepted (expectation `accept` or
/// `run:`), with its file name.
pub fn accepted_corpus() -> Vec<(String, Program)> {
    let mut out = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(corpus_dir())
        .expect("corpus directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "pap"))
        .collect();
    entries.sort();
    for path in entries {
        let expect = path.with_extension("expect");
        let Ok(expectation) = std::fs::read_to_string(&expect) else { continue };
        let first = expectation.lines().next().unwrap_or_default().trim().to_string();
        if first == "accept" || first.starts_with("run:") {
            let name = path.file_name().unwrap().to_string_lossy().to_string();
            out.push((name.clone(), load(&name)));
        }
    }
    out
}
