//! Surface syntax: the pre-desugaring program shape produced by the parser.
//!
//! Surface programs still contain bare identifiers (which may name a field or
//! the method parameter), optional return types and parameters, and the
//! `main { ... }` block. [`crate::lower`] resolves all of that into the core
//! AST.

use crate::ast::{FloatOp, Usage};
use crate::diag::Span;

#[derive(Debug, Clone, PartialEq)]
pub struct Ident {
    pub text: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SType {
    Void,
    Bool,
    Float,
    /// A class or enum name, resolved during lowering.
    Named(Ident),
}

#[derive(Debug, Clone)]
pub struct SurfaceProgram {
    pub decls: Vec<SDecl>,
    pub main: Option<SMain>,
}

#[derive(Debug, Clone)]
pub enum SDecl {
    Class(SClass),
    Enum(SEnum),
}

#[derive(Debug, Clone)]
pub struct SClass {
    pub name: Ident,
    pub usage: Usage,
    pub fields: Vec<SField>,
    pub methods: Vec<SMethod>,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub struct SEnum {
    pub name: Ident,
    pub labels: Vec<Ident>,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub struct SField {
    pub name: Ident,
    pub ty: SType,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub struct SMethod {
    pub name: Ident,
    pub param: Option<(Ident, SType)>,
    pub ret: Option<SType>,
    pub body: SBlock,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub struct SMain {
    pub fields: Vec<SField>,
    pub body: SBlock,
    pub span: Span,
}

/// `{ expr }` with an optional trailing semicolon. A trailing semicolon
/// discards the block's value: the block then ends in `unit`.
#[derive(Debug, Clone, PartialEq)]
pub struct SBlock {
    pub expr: SExpr,
    pub trailing_semi: bool,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SExpr {
    pub kind: SExprKind,
    pub span: Span,
}

/// An assignment target or bare read: `name` or `this.name`.
#[derive(Debug, Clone, PartialEq)]
pub struct SLval {
    pub this_qualified: bool,
    pub name: Ident,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SReceiver {
    This,
    ThisField(Ident),
    /// A bare name: the parameter or a field, resolved during lowering.
    Name(Ident),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SExprKind {
    Assign(SLval, Box<SExpr>),
    AssignNew(SLval, Ident),
    Seq(Box<SExpr>, Box<SExpr>),
    Call(SReceiver, Ident, Option<Box<SExpr>>),
    Unit,
    Null,
    True,
    False,
    Float(f64),
    Read(SLval),
    If(Box<SExpr>, Box<SBlock>, Box<SBlock>),
    Match(Box<SExpr>, Vec<SArm>),
    /// `#l`
    EnumLit(Ident),
    Label(Ident, Box<SBlock>),
    Continue(Ident),
    Bin(FloatOp, Box<SExpr>, Box<SExpr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SArm {
    pub label: Ident,
    pub body: SExpr,
    pub span: Span,
}
