//! Canonical rendering of surface programs. Reparsing pretty-printed output
//! reproduces the same surface tree, so printing is a fixed point after one
//! normalization pass.

use crate::ast::FloatOp;
use crate::surface::*;

pub fn pretty(p: &SurfaceProgram) -> String {
    let mut out = String::new();
    for (i, d) in p.decls.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        match d {
            SDecl::Class(c) => pretty_class(c, &mut out),
            SDecl::Enum(e) => {
                let labels: Vec<&str> = e.labels.iter().map(|l| l.text.as_str()).collect();
                out.push_str(&format!("enum {} {{ {} }}\n", e.name.text, labels.join(", ")));
            }
        }
    }
    if let Some(m) = &p.main {
        if !p.decls.is_empty() {
            out.push('\n');
        }
        out.push_str("main {\n");
        for f in &m.fields {
            out.push_str(&format!("  val {}: {};\n", f.name.text, ty(&f.ty)));
        }
        block_body(&m.body, 1, &mut out);
        out.push_str("}\n");
    }
    out
}

fn pretty_class(c: &SClass, out: &mut String) {
    out.push_str(&format!("class {}[{}] {{\n", c.name.text, c.usage));
    for f in &c.fields {
        out.push_str(&format!("  val {}: {};\n", f.name.text, ty(&f.ty)));
    }
    for m in &c.methods {
        let param = match &m.param {
            Some((p, t)) => format!("{}: {}", p.text, ty(t)),
            None => String::new(),
        };
        let ret = match &m.ret {
            Some(t) => format!(": {}", ty(t)),
            None => String::new(),
        };
        out.push_str(&format!("  fun {}({}){} {{\n", m.name.text, param, ret));
        block_body(&m.body, 2, &mut *out);
        out.push_str("  }\n");
    }
    out.push_str("}\n");
}

fn ty(t: &SType) -> String {
    match t {
        SType::Void => "void".to_string(),
        SType::Bool => "bool".to_string(),
        SType::Float => "float".to_string(),
        SType::Named(n) => n.text.clone(),
    }
}

/// Writes a block's statements, one per line, at the given indent depth.
fn block_body(b: &SBlock, depth: usize, out: &mut String) {
    let stmts = flatten(&b.expr);
    let pad = "  ".repeat(depth);
    for (i, s) in stmts.iter().enumerate() {
        out.push_str(&pad);
        stmt(s, depth, out);
        if i + 1 < stmts.len() || b.trailing_semi {
            out.push(';');
        }
        out.push('\n');
    }
}

fn flatten(e: &SExpr) -> Vec<&SExpr> {
    let mut out = Vec::new();
    let mut cur = e;
    while let SExprKind::Seq(a, b) = &cur.kind {
        out.push(a.as_ref());
        cur = b;
    }
    out.push(cur);
    out
}

/// Statement-position rendering: control structures get multi-line blocks.
fn stmt(e: &SExpr, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    match &e.kind {
        SExprKind::If(c, t, f) => {
            out.push_str(&format!("if ({}) {{\n", inline(c)));
            block_body(t, depth + 1, out);
            out.push_str(&format!("{pad}}} else {{\n"));
            block_body(f, depth + 1, out);
            out.push_str(&format!("{pad}}}"));
        }
        SExprKind::Label(k, b) => {
            out.push_str(&format!("label {} {{\n", k.text));
            block_body(b, depth + 1, out);
            out.push_str(&format!("{pad}}}"));
        }
        SExprKind::Match(s, arms) => {
            out.push_str(&format!("match ({}) {{\n", inline(s)));
            for a in arms {
                out.push_str(&format!("{pad}  {}: {}\n", a.label.text, inline(&a.body)));
            }
            out.push_str(&format!("{pad}}}"));
        }
        _ => out.push_str(&inline(e)),
    }
}

/// Single-line rendering, used inside conditions, arguments, and match arms.
fn inline(e: &SExpr) -> String {
    match &e.kind {
        SExprKind::Assign(l, v) => format!("{} = {}", lval(l), inline(v)),
        SExprKind::AssignNew(l, c) => format!("{} = new {}", lval(l), c.text),
        SExprKind::Seq(a, b) => format!("{}; {}", inline(a), inline(b)),
        SExprKind::Call(r, m, arg) => {
            let recv = match r {
                SReceiver::This => "this".to_string(),
                SReceiver::ThisField(f) => format!("this.{}", f.text),
                SReceiver::Name(n) => n.text.clone(),
            };
            match arg {
                Some(a) => format!("{recv}.{}({})", m.text, inline(a)),
                None => format!("{recv}.{}()", m.text),
            }
        }
        SExprKind::Unit => "unit".to_string(),
        SExprKind::Null => "null".to_string(),
        SExprKind::True => "true".to_string(),
        SExprKind::False => "false".to_string(),
        SExprKind::Float(v) => format!("{v}"),
        SExprKind::Read(l) => lval(l),
        SExprKind::If(c, t, f) => {
            format!("if ({}) {} else {}", inline(c), inline_block(t), inline_block(f))
        }
        SExprKind::Match(s, arms) => {
            let body: Vec<String> =
                arms.iter().map(|a| format!("{}: {}", a.label.text, inline(&a.body))).collect();
            format!("match ({}) {{ {} }}", inline(s), body.join(" "))
        }
        SExprKind::EnumLit(l) => format!("#{}", l.text),
        SExprKind::Label(k, b) => format!("label {} {}", k.text, inline_block(b)),
        SExprKind::Continue(k) => format!("continue {}", k.text),
        SExprKind::Bin(op, a, b) => {
            let sym = match op {
                FloatOp::Mul => "*",
                FloatOp::Add => "+",
            };
            format!("{} {} {}", inline(a), sym, inline(b))
        }
    }
}

fn inline_block(b: &SBlock) -> String {
    let semi = if b.trailing_semi { ";" } else { "" };
    format!("{{ {}{} }}", inline(&b.expr), semi)
}

fn lval(l: &SLval) -> String {
    if l.this_qualified {
        format!("this.{}", l.name.text)
    } else {
        l.name.text.clone()
    }
}
