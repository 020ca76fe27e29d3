//! Core abstract syntax: programs, declarations, expressions, and usages.
//!
//! Expressions here are the desugared form produced by [`crate::lower`]. The
//! same type doubles as the run-time expression language: during checking and
//! execution, `this` and the method parameter are substituted away, leaving
//! concrete object references ([`Owner::Obj`], [`Receiver::Obj`],
//! [`ExprKind::ObjRef`]) that never occur in source programs.

use std::collections::BTreeSet;
use std::fmt;

use crate::diag::{Diagnostic, Span};

/// An opaque object reference, allocated from a deterministic per-session
/// counter so traces are reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjRef(pub u32);

impl fmt::Display for ObjRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "o{}", self.0)
    }
}

/// A usage: the protocol state machine attached to a class.
///
/// Choices are only written directly under a branch in source programs; as an
/// LTS state, a choice can stand alone (it is the state reached after the
/// preceding method step).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Usage {
    /// `{m1; w1, m2; w2}`
    Branch(Vec<(String, Usage)>),
    /// `<l1: U1, l2: U2>`
    Choice(Vec<(String, Usage)>),
    /// `rec X. U`
    Rec(String, Box<Usage>),
    /// `X`
    Var(String),
    /// `end`
    End,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TypeAnnot {
    Class(String),
    Enum(String),
    Void,
    Bool,
    Float,
}

impl fmt::Display for TypeAnnot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeAnnot::Class(c) => write!(f, "{c}"),
            TypeAnnot::Enum(l) => write!(f, "{l}"),
            TypeAnnot::Void => write!(f, "void"),
            TypeAnnot::Bool => write!(f, "bool"),
            TypeAnnot::Float => write!(f, "float"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Program {
    pub decls: Vec<Decl>,
    /// The distinguished Main class; its usage is `{main; end}` and it has a
    /// single `main` method with a void parameter.
    pub main: ClassDecl,
}

#[derive(Debug, Clone)]
pub enum Decl {
    Class(ClassDecl),
    Enum(EnumDecl),
}

#[derive(Debug, Clone)]
pub struct ClassDecl {
    pub name: String,
    pub usage: Usage,
    pub fields: Vec<FieldDecl>,
    pub methods: Vec<MethodDecl>,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub struct EnumDecl {
    pub name: String,
    pub labels: Vec<String>,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub struct FieldDecl {
    pub name: String,
    pub ty: TypeAnnot,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub struct MethodDecl {
    pub name: String,
    pub param: String,
    pub param_ty: TypeAnnot,
    pub ret_ty: TypeAnnot,
    pub body: Expr,
    pub span: Span,
}

/// The object part of a field access, assignment, or enum literal: `this` in
/// source programs, a concrete reference once substituted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Owner {
    This,
    Obj(ObjRef),
}

/// A call receiver: `this`, the parameter, a field, or (run-time only) a
/// concrete object reference. Call chaining is not part of the language.
#[derive(Debug, Clone, PartialEq)]
pub enum Receiver {
    This,
    Param,
    Obj(ObjRef),
    Field(Owner, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloatOp {
    Mul,
    Add,
}

/// Stand-in kinds for base-typed argument values during checking. Base values
/// never influence the typing environment, so their identity is irrelevant.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseStub {
    Bool,
    Void,
    Float,
    Bot,
    Enum(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    /// `o.f = e`
    Assign(Owner, String, Box<Expr>),
    /// `o.f = new C`
    AssignNew(Owner, String, String),
    /// `e; e`
    Seq(Box<Expr>, Box<Expr>),
    /// `r.m(e)`
    Call(Receiver, String, Box<Expr>),
    Unit,
    /// `o.f`
    Field(Owner, String),
    /// The method parameter.
    Param,
    If(Box<Expr>, Box<Expr>, Box<Expr>),
    /// `o.l` — an enum literal; `#l` in source, where the owner is `this`.
    EnumLit(Owner, String),
    Match(Box<Expr>, Vec<MatchArm>),
    Null,
    Bool(bool),
    /// `k : e`
    Label(String, Box<Expr>),
    Continue(String),
    Float(f64),
    FloatBin(FloatOp, Box<Expr>, Box<Expr>),
    /// Run-time only: a bare object reference.
    ObjRef(ObjRef),
    /// Checker-internal placeholder for a base-typed argument value.
    Stub(BaseStub),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchArm {
    pub label: String,
    pub body: Expr,
    pub span: Span,
}

impl Expr {
    pub fn new(kind: ExprKind, span: Span) -> Self {
        Expr { kind, span }
    }
}

impl Program {
    pub fn class(&self, name: &str) -> Option<&ClassDecl> {
        if self.main.name == name {
            return Some(&self.main);
        }
        self.decls.iter().find_map(|d| match d {
            Decl::Class(c) if c.name == name => Some(c),
            _ => None,
        })
    }

    pub fn enum_def(&self, name: &str) -> Option<&EnumDecl> {
        self.decls.iter().find_map(|d| match d {
            Decl::Enum(e) if e.name == name => Some(e),
            _ => None,
        })
    }

    /// All declared enums containing the given label.
    pub fn enums_with_label(&self, label: &str) -> Vec<&EnumDecl> {
        self.decls
            .iter()
            .filter_map(|d| match d {
                Decl::Enum(e) if e.labels.iter().any(|l| l == label) => Some(e),
                _ => None,
            })
            .collect()
    }

    pub fn main_method(&self) -> Option<&MethodDecl> {
        self.main.method("main")
    }
}

impl ClassDecl {
    pub fn field(&self, name: &str) -> Option<&FieldDecl> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn method(&self, name: &str) -> Option<&MethodDecl> {
        self.methods.iter().find(|m| m.name == name)
    }
}

// ── Substitution ────────────────────────────────────────────────────

/// Substitutes `this` by a concrete reference in owners and receivers.
pub fn subst_this(e: &Expr, obj: ObjRef) -> Expr {
    let owner = |o: &Owner| match o {
        Owner::This => Owner::Obj(obj),
        Owner::Obj(r) => Owner::Obj(*r),
    };
    let recv = |r: &Receiver| match r {
        Receiver::This => Receiver::Obj(obj),
        Receiver::Field(o, f) => Receiver::Field(owner(o), f.clone()),
        other => other.clone(),
    };
    map_expr(e, &|kind| match kind {
        ExprKind::Assign(o, f, v) => ExprKind::Assign(owner(&o), f, v),
        ExprKind::AssignNew(o, f, c) => ExprKind::AssignNew(owner(&o), f, c),
        ExprKind::Call(r, m, a) => ExprKind::Call(recv(&r), m, a),
        ExprKind::Field(o, f) => ExprKind::Field(owner(&o), f),
        ExprKind::EnumLit(o, l) => ExprKind::EnumLit(owner(&o), l),
        other => other,
    })
}

/// Substitutes the method parameter by a value-form expression. A `Param`
/// receiver becomes a direct object receiver when the value is a reference;
/// otherwise it stays in place and is reported at its use site.
pub fn subst_param(e: &Expr, value: &Expr) -> Expr {
    let obj = match value.kind {
        ExprKind::ObjRef(o) => Some(o),
        _ => None,
    };
    map_expr(e, &|kind| match kind {
        ExprKind::Param => value.kind.clone(),
        ExprKind::Call(Receiver::Param, m, a) => match obj {
            Some(o) => ExprKind::Call(Receiver::Obj(o), m, a),
            None => ExprKind::Call(Receiver::Param, m, a),
        },
        other => other,
    })
}

/// Substitutes `continue k` by `replacement`, stopping at inner labels that
/// rebind `k`.
pub fn subst_continue(e: &Expr, label: &str, replacement: &Expr) -> Expr {
    match &e.kind {
        ExprKind::Continue(k) if k == label => replacement.clone(),
        ExprKind::Label(k, _) if k == label => e.clone(),
        _ => {
            let kind = clone_map_children(&e.kind, &|child| subst_continue(child, label, replacement));
            Expr::new(kind, e.span)
        }
    }
}

fn clone_map_children(kind: &ExprKind, f: &impl Fn(&Expr) -> Expr) -> ExprKind {
    match kind {
        ExprKind::Assign(o, n, v) => ExprKind::Assign(*o, n.clone(), Box::new(f(v))),
        ExprKind::Seq(a, b) => ExprKind::Seq(Box::new(f(a)), Box::new(f(b))),
        ExprKind::Call(r, m, a) => ExprKind::Call(r.clone(), m.clone(), Box::new(f(a))),
        ExprKind::If(c, t, e) => ExprKind::If(Box::new(f(c)), Box::new(f(t)), Box::new(f(e))),
        ExprKind::Match(s, arms) => ExprKind::Match(
            Box::new(f(s)),
            arms.iter()
                .map(|a| MatchArm { label: a.label.clone(), body: f(&a.body), span: a.span })
                .collect(),
        ),
        ExprKind::Label(k, b) => ExprKind::Label(k.clone(), Box::new(f(b))),
        ExprKind::FloatBin(op, a, b) => ExprKind::FloatBin(*op, Box::new(f(a)), Box::new(f(b))),
        other => other.clone(),
    }
}

/// Rebuilds an expression bottom-up, applying `f` to every node's kind after
/// its children have been rebuilt.
fn map_expr(e: &Expr, f: &impl Fn(ExprKind) -> ExprKind) -> Expr {
    let kind = clone_map_children(&e.kind, &|child| map_expr(child, f));
    Expr::new(f(kind), e.span)
}

/// Visits every node of an expression tree.
pub fn visit_expr<'a>(e: &'a Expr, f: &mut impl FnMut(&'a Expr)) {
    f(e);
    match &e.kind {
        ExprKind::Assign(_, _, v) => visit_expr(v, f),
        ExprKind::Seq(a, b) => {
            visit_expr(a, f);
            visit_expr(b, f);
        }
        ExprKind::Call(_, _, a) => visit_expr(a, f),
        ExprKind::If(c, t, e2) => {
            visit_expr(c, f);
            visit_expr(t, f);
            visit_expr(e2, f);
        }
        ExprKind::Match(s, arms) => {
            visit_expr(s, f);
            for a in arms {
                visit_expr(&a.body, f);
            }
        }
        ExprKind::Label(_, b) => visit_expr(b, f),
        ExprKind::FloatBin(_, a, b) => {
            visit_expr(a, f);
            visit_expr(b, f);
        }
        _ => {}
    }
}

/// The largest object reference mentioned anywhere in the expression, if any.
pub fn max_ref(e: &Expr) -> Option<ObjRef> {
    let mut best: Option<ObjRef> = None;
    let mut bump = |o: ObjRef| {
        if best.is_none_or(|b| o > b) {
            best = Some(o);
        }
    };
    visit_expr(e, &mut |n| {
        match &n.kind {
            ExprKind::ObjRef(o) => bump(*o),
            ExprKind::Assign(Owner::Obj(o), _, _)
            | ExprKind::AssignNew(Owner::Obj(o), _, _)
            | ExprKind::Field(Owner::Obj(o), _)
            | ExprKind::EnumLit(Owner::Obj(o), _) => bump(*o),
            ExprKind::Call(r, _, _) => match r {
                Receiver::Obj(o) => bump(*o),
                Receiver::Field(Owner::Obj(o), _) => bump(*o),
                _ => {}
            },
            _ => {}
        };
    });
    best
}

/// True when no concrete object reference occurs anywhere in the expression.
pub fn is_source_level(e: &Expr) -> bool {
    max_ref(e).is_none()
}

// ── Program validation ──────────────────────────────────────────────

/// Checks the structural invariants of a desugared program: distinct names,
/// resolvable type annotations, and closed, contractive class usages.
pub fn validate(p: &Program) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut names: BTreeSet<&str> = BTreeSet::new();
    names.insert(p.main.name.as_str());

    for d in &p.decls {
        let (name, span) = match d {
            Decl::Class(c) => (&c.name, c.span),
            Decl::Enum(e) => (&e.name, e.span),
        };
        if !names.insert(name) {
            diags.push(Diagnostic::error(
                "DuplicateName",
                span,
                format!("`{name}` is declared more than once"),
            ));
        }
    }

    for d in &p.decls {
        match d {
            Decl::Class(c) => validate_class(p, c, &mut diags),
            Decl::Enum(e) => {
                if e.labels.is_empty() {
                    diags.push(Diagnostic::error(
                        "EmptyEnum",
                        e.span,
                        format!("enum `{}` has no labels", e.name),
                    ));
                }
                let mut seen = BTreeSet::new();
                for l in &e.labels {
                    if !seen.insert(l.as_str()) {
                        diags.push(Diagnostic::error(
                            "DuplicateName",
                            e.span,
                            format!("label `{l}` is declared twice in enum `{}`", e.name),
                        ));
                    }
                }
            }
        }
    }
    validate_class(p, &p.main, &mut diags);

    match p.main.method("main") {
        None => diags.push(Diagnostic::error(
            "MissingMain",
            p.main.span,
            "the Main class has no `main` method",
        )),
        Some(m) => {
            if m.param_ty != TypeAnnot::Void {
                diags.push(Diagnostic::error(
                    "MissingMain",
                    m.span,
                    "the `main` method must take a void parameter",
                ));
            }
        }
    }
    if p.main.methods.len() != 1 {
        diags.push(Diagnostic::error(
            "MissingMain",
            p.main.span,
            "the Main class must have exactly one method",
        ));
    }
    let main_usage = Usage::Branch(vec![("main".to_string(), Usage::End)]);
    if p.main.usage != main_usage {
        diags.push(Diagnostic::error(
            "MissingMain",
            p.main.span,
            "the Main class must have usage {main; end}",
        ));
    }
    diags
}

fn validate_class(p: &Program, c: &ClassDecl, diags: &mut Vec<Diagnostic>) {
    let mut fields = BTreeSet::new();
    for f in &c.fields {
        if !fields.insert(f.name.as_str()) {
            diags.push(Diagnostic::error(
                "DuplicateName",
                f.span,
                format!("field `{}` is declared twice in class `{}`", f.name, c.name),
            ));
        }
        validate_type(p, &f.ty, f.span, diags);
    }
    let mut methods = BTreeSet::new();
    for m in &c.methods {
        if !methods.insert(m.name.as_str()) {
            diags.push(Diagnostic::error(
                "DuplicateName",
                m.span,
                format!("method `{}` is declared twice in class `{}`", m.name, c.name),
            ));
        }
        validate_type(p, &m.param_ty, m.span, diags);
        validate_type(p, &m.ret_ty, m.span, diags);
    }
    let free = crate::usage::free_vars(&c.usage);
    if !free.is_empty() {
        diags.push(Diagnostic::error(
            "OpenUsage",
            c.span,
            format!("usage of class `{}` has unbound variables: {}", c.name, free.join(", ")),
        ));
    }
    if !crate::usage::is_contractive(&c.usage) {
        diags.push(Diagnostic::error(
            "NonContractive",
            c.span,
            format!("usage of class `{}` recurses without offering an action", c.name),
        ));
    }
}

fn validate_type(p: &Program, t: &TypeAnnot, span: Span, diags: &mut Vec<Diagnostic>) {
    match t {
        TypeAnnot::Class(n) if p.class(n).is_none() => {
            diags.push(Diagnostic::error("UnknownType", span, format!("unknown class `{n}`")));
        }
        TypeAnnot::Enum(n) if p.enum_def(n).is_none() => {
            diags.push(Diagnostic::error("UnknownType", span, format!("unknown enum `{n}`")));
        }
        _ => {}
    }
}
