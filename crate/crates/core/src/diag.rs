//! Source spans and diagnostics shared by the parser, the well-formedness
//! checks, and the typechecker.

use serde::Serialize;

/// Identifies a source file within a session. The CLI processes one file per
/// pipeline, so this is usually `FileId(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct FileId(pub u32);

/// A byte range in a source file, with the line and column of its start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Span {
    pub file: FileId,
    pub start: u32,
    pub end: u32,
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub fn new(file: FileId, start: u32, end: u32, line: u32, col: u32) -> Self {
        Span { file, start, end, line, col }
    }

    /// A zero-width span for synthesized nodes.
    pub fn synthetic() -> Self {
        Span { file: FileId(0), start: 0, end: 0, line: 1, col: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// A diagnostic with a stable `rule` name (used by the corpus runner to match
/// expected rejection kinds), a span, and a human-readable message.
#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub severity: Severity,
    pub rule: String,
    pub span: Span,
    pub message: String,
    /// Rendered object reference, when the diagnostic concerns one.
    pub object: Option<String>,
    /// Rendered usage state, when the diagnostic concerns one.
    pub usage: Option<String>,
}

impl Diagnostic {
    pub fn error(rule: impl Into<String>, span: Span, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            rule: rule.into(),
            span,
            message: message.into(),
            object: None,
            usage: None,
        }
    }

    /// Renders as `file:line:col: error: message`.
    pub fn render(&self, file_name: &str) -> String {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        format!(
            "{}:{}:{}: {}: {} [{}]",
            file_name, self.span.line, self.span.col, sev, self.message, self.rule
        )
    }

    pub fn to_json(&self, file_name: &str) -> serde_json::Value {
        let mut v = serde_json::json!({
            "severity": match self.severity { Severity::Error => "error", Severity::Warning => "warning" },
            "rule": self.rule,
            "span": { "file": file_name, "line": self.span.line, "col": self.span.col },
            "message": self.message,
        });
        if let Some(o) = &self.object {
            v["object"] = serde_json::Value::String(o.clone());
        }
        if let Some(u) = &self.usage {
            v["usage"] = serde_json::Value::String(u.clone());
        }
        v
    }
}

/// FNV-1a over a byte string. Used for environment hashes in rule traces,
/// which must be byte-stable across runs for golden files.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_format() {
        let d = Diagnostic::error("SyntaxError", Span::new(FileId(0), 3, 4, 2, 7), "unexpected `]`");
        assert_eq!(d.render("a.pap"), "a.pap:2:7: error: unexpected `]` [SyntaxError]");
    }

    #[test]
    fn stable_hash_is_stable() {
        assert_eq!(stable_hash(b"end"), stable_hash(b"end"));
        assert_ne!(stable_hash(b"end"), stable_hash(b"End"));
    }
}
