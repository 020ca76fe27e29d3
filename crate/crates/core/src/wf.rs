//! Well-formedness of expressions and methods.
//!
//! An expression is well-formed if (1) no expression follows a `continue`
//! after unfolding, (2) it has no free loop labels, (3) every `continue` is
//! guarded by an `if` or `match`, and (4) every labelled expression has a
//! branch that does not end in `continue`. A method is well-formed if its
//! body is and every self-recursive call is guarded by a branching
//! expression.

use std::collections::BTreeSet;

use crate::ast::*;
use crate::diag::Diagnostic;

pub const CLAUSE_CONTINUE_FOLLOWED: &str = "ContinueFollowed";
pub const CLAUSE_FREE_LABEL: &str = "FreeLabel";
pub const CLAUSE_UNGUARDED_CONTINUE: &str = "UnguardedContinue";
pub const CLAUSE_NO_TERMINATING_BRANCH: &str = "NoTerminatingBranch";
pub const UNGUARDED_RECURSION: &str = "UnguardedRecursion";

pub fn well_formed_expr(e: &Expr) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    walk(e, &[], &BTreeSet::new(), &mut diags);
    diags
}

pub fn well_formed_method(m: &MethodDecl, enclosing: &ClassDecl) -> Vec<Diagnostic> {
    let mut diags = well_formed_expr(&m.body);
    recursion_walk(&m.body, &m.name, &enclosing.name, false, &mut diags);
    diags
}

/// Runs the expression and method checks over every method of the program,
/// after the structural validation of [`crate::ast::validate`].
pub fn well_formed_program(p: &Program) -> Vec<Diagnostic> {
    let mut diags = crate::ast::validate(p);
    let classes = p
        .decls
        .iter()
        .filter_map(|d| match d {
            Decl::Class(c) => Some(c),
            _ => None,
        })
        .chain(std::iter::once(&p.main));
    for c in classes {
        for m in &c.methods {
            diags.extend(well_formed_method(m, c));
        }
    }
    diags
}

/// `bound` tracks enclosing labels innermost-last, each with whether an `if`
/// or `match` has been crossed since its binder. `tail` holds the labels with
/// respect to which the current position is final: a `continue` outside that
/// set would be followed by more of the loop body once unfolded.
fn walk(
    e: &Expr,
    bound: &[(String, bool)],
    tail: &BTreeSet<String>,
    diags: &mut Vec<Diagnostic>,
) {
    let empty = BTreeSet::new();
    match &e.kind {
        ExprKind::Continue(k) => match bound.iter().rev().find(|(n, _)| n == k) {
            None => diags.push(Diagnostic::error(
                CLAUSE_FREE_LABEL,
                e.span,
                format!("`continue {k}` has no enclosing `label {k}`"),
            )),
            Some((_, guarded)) => {
                if !tail.contains(k) {
                    diags.push(Diagnostic::error(
                        CLAUSE_CONTINUE_FOLLOWED,
                        e.span,
                        format!("an expression follows `continue {k}` after unfolding"),
                    ));
                }
                if !guarded {
                    diags.push(Diagnostic::error(
                        CLAUSE_UNGUARDED_CONTINUE,
                        e.span,
                        format!("`continue {k}` is not guarded by an `if` or `match`"),
                    ));
                }
            }
        },
        ExprKind::Label(k, body) => {
            if ends_in_continue(body) {
                diags.push(Diagnostic::error(
                    CLAUSE_NO_TERMINATING_BRANCH,
                    e.span,
                    format!("every branch of `label {k}` ends in `continue`"),
                ));
            }
            let mut bound2 = bound.to_vec();
            bound2.push((k.clone(), false));
            let mut tail2 = tail.clone();
            tail2.insert(k.clone());
            walk(body, &bound2, &tail2, diags);
        }
        ExprKind::Seq(a, b) => {
            walk(a, bound, &empty, diags);
            walk(b, bound, tail, diags);
        }
        ExprKind::If(c, t, f) => {
            walk(c, bound, &empty, diags);
            let guarded = guard_all(bound);
            walk(t, &guarded, tail, diags);
            walk(f, &guarded, tail, diags);
        }
        ExprKind::Match(s, arms) => {
            walk(s, bound, &empty, diags);
            let guarded = guard_all(bound);
            for arm in arms {
                walk(&arm.body, &guarded, tail, diags);
            }
        }
        ExprKind::Assign(_, _, v) => walk(v, bound, &empty, diags),
        ExprKind::Call(_, _, a) => walk(a, bound, &empty, diags),
        ExprKind::FloatBin(_, a, b) => {
            walk(a, bound, &empty, diags);
            walk(b, bound, &empty, diags);
        }
        _ => {}
    }
}

fn guard_all(bound: &[(String, bool)]) -> Vec<(String, bool)> {
    bound.iter().map(|(n, _)| (n.clone(), true)).collect()
}

/// True when every evaluation path through `e` ends in a `continue`.
fn ends_in_continue(e: &Expr) -> bool {
    match &e.kind {
        ExprKind::Continue(_) => true,
        ExprKind::Seq(_, b) => ends_in_continue(b),
        ExprKind::If(_, t, f) => ends_in_continue(t) && ends_in_continue(f),
        ExprKind::Match(_, arms) => arms.iter().all(|a| ends_in_continue(&a.body)),
        ExprKind::Label(_, b) => ends_in_continue(b),
        _ => false,
    }
}

/// Flags self-recursive calls (`this.m(...)` inside `m`) that are not under
/// an `if` or `match`.
fn recursion_walk(
    e: &Expr,
    method: &str,
    class: &str,
    guarded: bool,
    diags: &mut Vec<Diagnostic>,
) {
    match &e.kind {
        ExprKind::Call(recv, m, arg) => {
            if matches!(recv, Receiver::This) && m == method && !guarded {
                diags.push(Diagnostic::error(
                    UNGUARDED_RECURSION,
                    e.span,
                    format!("recursive call to `{class}.{method}` is not guarded by a branching expression"),
                ));
            }
            recursion_walk(arg, method, class, guarded, diags);
        }
        ExprKind::If(c, t, f) => {
            recursion_walk(c, method, class, guarded, diags);
            recursion_walk(t, method, class, true, diags);
            recursion_walk(f, method, class, true, diags);
        }
        ExprKind::Match(s, arms) => {
            recursion_walk(s, method, class, guarded, diags);
            for arm in arms {
                recursion_walk(&arm.body, method, class, true, diags);
            }
        }
        ExprKind::Seq(a, b) => {
            recursion_walk(a, method, class, guarded, diags);
            recursion_walk(b, method, class, guarded, diags);
        }
        ExprKind::Label(_, b) => recursion_walk(b, method, class, guarded, diags),
        ExprKind::Assign(_, _, v) => recursion_walk(v, method, class, guarded, diags),
        ExprKind::FloatBin(_, a, b) => {
            recursion_walk(a, method, class, guarded, diags);
            recursion_walk(b, method, class, guarded, diags);
        }
        _ => {}
    }
}
