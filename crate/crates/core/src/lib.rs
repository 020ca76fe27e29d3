//! A small object-oriented language with typestate annotations.
//!
//! Each class declares a usage: a protocol state machine fixing the order in
//! which its methods may be called, with branching on enum results and
//! recursion. The analysis is global and alias-aware: objects may be freely
//! shared through fields, and the checker tracks every reference through a
//! single abstract heap, so a call through one alias advances the protocol
//! seen through all of them.
//!
//! The crate provides the full pipeline:
//!
//! - [`parser`] and [`lower`]: surface syntax to core AST;
//! - [`wf`]: well-formedness of loops and recursion;
//! - [`usage`]: the transition system over protocols, with bisimilarity;
//! - [`typeenv`] and [`checker`]: the typestate analysis proper;
//! - [`interp`]: labelled small-step execution and the runtime monitor;
//! - [`harness`]: subject reduction, progress, conformance, and completion
//!   as executable properties.

pub mod ast;
pub mod checker;
pub mod diag;
pub mod harness;
pub mod interp;
pub mod lexer;
pub mod lower;
pub mod parser;
pub mod pretty;
pub mod surface;
pub mod typeenv;
pub mod usage;
pub mod wf;

use diag::{Diagnostic, FileId};

/// Default step budget for execution: the calculus admits non-terminating
/// loops, so runs are fuel-bounded.
pub const DEFAULT_FUEL: u64 = 1_000_000;

/// Full front-end pipeline: parse, lower, validate, and check
/// well-formedness. The result is ready for the typechecker.
pub fn compile(text: &str, file: FileId) -> Result<ast::Program, Vec<Diagnostic>> {
    let surface = parser::parse(text, file)?;
    let mut program = lower::lower(&surface)?;
    lower::resolve_named_types(&mut program);
    let diags = wf::well_formed_program(&program);
    if diags.is_empty() {
        Ok(program)
    } else {
        Err(diags)
    }
}
