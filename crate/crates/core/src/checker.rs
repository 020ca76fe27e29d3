//! The global typestate analysis.
//!
//! Judgments have the shape Θ;Ω;Γ ⊢ e : T ⊣ Γ′: given the recursion
//! environment Θ (snapshots installed at method expansion), the label
//! environment Ω (snapshots installed at loop entry), and the typing
//! environment Γ, checking `e` produces a value type and an updated
//! environment. Method calls are expanded in place, so the checker visits
//! every reachable part of the program; Θ provides the base case that stops
//! the expansion of recursive calls, and Ω the base case for `continue`.
//!
//! `continue` and recursive-call base cases produce a [`CheckResult::Pending`]
//! that is adopted from the sibling branch at the nearest join; well-formed
//! programs never let a pending result escape a labelled expression or an
//! expanded method body.

// Judgments return the full diagnostic payload (usage state, object) so
// rejections can be explained; the Err side being wide is intentional.
#![allow(clippy::result_large_err)]

use std::collections::BTreeMap;
use std::fmt;

use crate::ast::{self, Expr, ExprKind, MatchArm, ObjRef, Owner, Program, Receiver};
use crate::ast::{BaseStub, TypeAnnot, Usage};
use crate::diag::{stable_hash, Diagnostic, Severity, Span};
use crate::typeenv::{
    agree, env_diff, env_equal, get_type, init_types, returns, term, vtype, FieldType,
    ObjectType, TypeEnv, ValueType,
};
use crate::usage::{self, UsageAction};

/// Recursion environment Θ: typing-environment snapshots keyed by the
/// expanded call's receiver and method.
pub type RecEnv = BTreeMap<(ObjRef, String), TypeEnv>;

/// Label environment Ω: typing-environment snapshots keyed by loop label.
pub type LabelEnv = BTreeMap<String, TypeEnv>;

#[derive(Debug, Clone)]
pub enum CheckResult {
    Done(ValueType, TypeEnv),
    /// Produced by `continue` and by recursive-call base cases; resolved at
    /// the nearest branch join.
    Pending,
}

/// The nineteen typing rules, as recorded in rule traces.
pub const TYPING_RULES: [&str; 19] = [
    "Main", "Assign", "Field", "New", "Unit", "Bool", "Enum", "Null", "Const", "Obj", "Call-d",
    "Call-d-rec", "Call-ind", "Call-ind-rec", "If", "Comp", "Label", "Continue", "Case",
];

#[derive(Debug, Clone)]
pub struct RuleTrace {
    pub rule: &'static str,
    pub span: Span,
    pub env_hash: u64,
}

impl RuleTrace {
    pub fn render(&self) -> String {
        format!("RULE {} {}:{} {:016x}", self.rule, self.span.line, self.span.col, self.env_hash)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DiagKind {
    MethodNotAvailable { object: ObjRef, method: String, usage: Usage },
    LabelNotAvailable { object: ObjRef, label: String, usage: Usage },
    ArgumentMismatch { method: String, expected: TypeAnnot, found: String },
    AssignMismatch { field: String, expected: String, found: String },
    ReturnMismatch { method: String, expected: TypeAnnot, found: String },
    BranchMismatch { detail: String },
    ContinueEnvMismatch { label: String, detail: String },
    RecursiveEnvMismatch { object: ObjRef, method: String },
    NonExhaustiveMatch { enum_name: String, missing: Vec<String> },
    DuplicateArm { label: String },
    LinkExpected { found: String },
    LinkNotStorable { enum_name: String, object: ObjRef },
    NullReceiver { object: ObjRef, field: String },
    ReceiverNotObject { detail: String },
    UnknownMethod { class: String, method: String },
    UnknownField { class: String, field: String },
    UnknownClass { name: String },
    UnknownLabel { label: String },
    AmbiguousLabel { label: String, enums: Vec<String> },
    UnknownObject { object: ObjRef },
    CondNotBool { found: String },
    FloatOperand { found: String },
    UnfinishedProtocol { object: ObjRef, class: String, usage: Usage },
    UsageIssue { detail: String },
    Internal { detail: String },
}

impl DiagKind {
    pub fn name(&self) -> &'static str {
        match self {
            DiagKind::MethodNotAvailable { .. } => "MethodNotAvailable",
            DiagKind::LabelNotAvailable { .. } => "LabelNotAvailable",
            DiagKind::ArgumentMismatch { .. } => "ArgumentMismatch",
            DiagKind::AssignMismatch { .. } => "AssignMismatch",
            DiagKind::ReturnMismatch { .. } => "ReturnMismatch",
            DiagKind::BranchMismatch { .. } => "BranchMismatch",
            DiagKind::ContinueEnvMismatch { .. } => "ContinueEnvMismatch",
            DiagKind::RecursiveEnvMismatch { .. } => "RecursiveEnvMismatch",
            DiagKind::NonExhaustiveMatch { .. } => "NonExhaustiveMatch",
            DiagKind::DuplicateArm { .. } => "DuplicateArm",
            DiagKind::LinkExpected { .. } => "LinkExpected",
            DiagKind::LinkNotStorable { .. } => "LinkNotStorable",
            DiagKind::NullReceiver { .. } => "NullReceiver",
            DiagKind::ReceiverNotObject { .. } => "ReceiverNotObject",
            DiagKind::UnknownMethod { .. } => "UnknownMethod",
            DiagKind::UnknownField { .. } => "UnknownField",
            DiagKind::UnknownClass { .. } => "UnknownClass",
            DiagKind::UnknownLabel { .. } => "UnknownLabel",
            DiagKind::AmbiguousLabel { .. } => "AmbiguousLabel",
            DiagKind::UnknownObject { .. } => "UnknownObject",
            DiagKind::CondNotBool { .. } => "CondNotBool",
            DiagKind::FloatOperand { .. } => "FloatOperand",
            DiagKind::UnfinishedProtocol { .. } => "UnfinishedProtocol",
            DiagKind::UsageIssue { .. } => "UsageIssue",
            DiagKind::Internal { .. } => "Internal",
        }
    }

    pub fn object(&self) -> Option<ObjRef> {
        match self {
            DiagKind::MethodNotAvailable { object, .. }
            | DiagKind::LabelNotAvailable { object, .. }
            | DiagKind::RecursiveEnvMismatch { object, .. }
            | DiagKind::NullReceiver { object, .. }
            | DiagKind::LinkNotStorable { object, .. }
            | DiagKind::UnknownObject { object }
            | DiagKind::UnfinishedProtocol { object, .. } => Some(*object),
            _ => None,
        }
    }

    pub fn usage(&self) -> Option<&Usage> {
        match self {
            DiagKind::MethodNotAvailable { usage, .. }
            | DiagKind::LabelNotAvailable { usage, .. }
            | DiagKind::UnfinishedProtocol { usage, .. } => Some(usage),
            _ => None,
        }
    }
}

/// A rejection from the typestate analysis: the failed kind, the typing rule
/// being applied, and the source position.
#[derive(Debug, Clone)]
pub struct TypeDiagnostic {
    pub kind: DiagKind,
    pub rule: &'static str,
    pub span: Span,
}

impl TypeDiagnostic {
    fn new(kind: DiagKind, rule: &'static str, span: Span) -> Self {
        TypeDiagnostic { kind, rule, span }
    }

    pub fn to_diagnostic(&self) -> Diagnostic {
        Diagnostic {
            severity: Severity::Error,
            rule: self.kind.name().to_string(),
            span: self.span,
            message: explain(self),
            object: self.kind.object().map(|o| o.to_string()),
            usage: self.kind.usage().map(|u| u.to_string()),
        }
    }
}

impl fmt::Display for TypeDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", explain(self))
    }
}

/// Renders a diagnostic naming the typing rule, the object, its usage state,
/// and the attempted action.
pub fn explain(d: &TypeDiagnostic) -> String {
    let body = match &d.kind {
        DiagKind::MethodNotAvailable { object, method, usage } => format!(
            "method `{method}` is not available on {object}: its protocol is in state {usage}"
        ),
        DiagKind::LabelNotAvailable { object, label, usage } => format!(
            "label `{label}` is not a choice offered by {object}: its protocol is in state {usage}"
        ),
        DiagKind::ArgumentMismatch { method, expected, found } => format!(
            "argument of `{method}` should have type {expected}, found {found}"
        ),
        DiagKind::AssignMismatch { field, expected, found } => {
            format!("field `{field}` holds {expected}, cannot assign {found}")
        }
        DiagKind::ReturnMismatch { method, expected, found } => {
            format!("`{method}` declares return type {expected}, body has type {found}")
        }
        DiagKind::BranchMismatch { detail } => {
            format!("branches disagree: {detail}")
        }
        DiagKind::ContinueEnvMismatch { label, detail } => format!(
            "`continue {label}` reached with an environment differing from the loop entry: {detail}"
        ),
        DiagKind::RecursiveEnvMismatch { object, method } => format!(
            "recursive expansion of `{method}` on {object} never returns to a previously seen environment"
        ),
        DiagKind::NonExhaustiveMatch { enum_name, missing } => format!(
            "match on `{enum_name}` is missing labels: {}",
            missing.join(", ")
        ),
        DiagKind::DuplicateArm { label } => format!("duplicate match arm `{label}`"),
        DiagKind::LinkExpected { found } => format!(
            "match scrutinee must be an enum linked to an object, found {found}"
        ),
        DiagKind::LinkNotStorable { enum_name, object } => format!(
            "link type {enum_name} link {object} cannot be stored in a field"
        ),
        DiagKind::NullReceiver { object, field } => {
            format!("field `{field}` of {object} is null here; cannot call through it")
        }
        DiagKind::ReceiverNotObject { detail } => format!("call receiver is not an object: {detail}"),
        DiagKind::UnknownMethod { class, method } => {
            format!("class `{class}` has no method `{method}`")
        }
        DiagKind::UnknownField { class, field } => format!("class `{class}` has no field `{field}`"),
        DiagKind::UnknownClass { name } => format!("unknown class `{name}`"),
        DiagKind::UnknownLabel { label } => format!("no declared enum has a label `{label}`"),
        DiagKind::AmbiguousLabel { label, enums } => format!(
            "label `{label}` belongs to several enums ({}); rename to disambiguate",
            enums.join(", ")
        ),
        DiagKind::UnknownObject { object } => {
            format!("object {object} is not bound in the typing environment")
        }
        DiagKind::CondNotBool { found } => format!("condition must be bool, found {found}"),
        DiagKind::FloatOperand { found } => format!("arithmetic operand must be float, found {found}"),
        DiagKind::UnfinishedProtocol { object, class, usage } => format!(
            "{object} of class `{class}` ends the program with unfinished protocol {usage}"
        ),
        DiagKind::UsageIssue { detail } => detail.clone(),
        DiagKind::Internal { detail } => format!("internal: {detail}"),
    };
    format!("[{}] {}", d.rule, body)
}

#[derive(Debug, Clone)]
pub struct CheckOptions {
    /// Skips the first N recursive base-case hits, forcing the corresponding
    /// method bodies to be expanded once more. Test hook for the
    /// snapshot-deletion property: removing a Θ binding must not change the
    /// result.
    pub skip_rec_base_cases: u32,
    /// Safety bound on nested method expansions.
    pub max_expansion_depth: u32,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { skip_rec_base_cases: 0, max_expansion_depth: 256 }
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub result: ValueType,
    pub final_env: TypeEnv,
    pub trace: Vec<RuleTrace>,
    /// Number of times each call site's method body was expanded.
    pub expansions: BTreeMap<(ObjRef, String), u32>,
}

pub struct Checker<'p> {
    program: &'p Program,
    next_ref: u32,
    trace: Vec<RuleTrace>,
    expansions: BTreeMap<(ObjRef, String), u32>,
    expansion_depth: u32,
    base_skips_left: u32,
    options: CheckOptions,
}

type CResult = Result<CheckResult, TypeDiagnostic>;

impl<'p> Checker<'p> {
    pub fn new(program: &'p Program) -> Self {
        Checker::with_options(program, CheckOptions::default())
    }

    pub fn with_options(program: &'p Program, options: CheckOptions) -> Self {
        Checker {
            program,
            next_ref: 0,
            trace: Vec::new(),
            expansions: BTreeMap::new(),
            expansion_depth: 0,
            base_skips_left: options.skip_rec_base_cases,
            options,
        }
    }

    fn fresh(&mut self) -> ObjRef {
        let o = ObjRef(self.next_ref);
        self.next_ref += 1;
        o
    }

    fn record(&mut self, rule: &'static str, span: Span, env: &TypeEnv) {
        let hash = stable_hash(env.to_string().as_bytes());
        self.trace.push(RuleTrace { rule, span, env_hash: hash });
    }

    /// The environment Γ0 of the (Main) rule: a single binding for the main
    /// object, with the Main usage already past its `main` step.
    pub fn initial_env(&mut self) -> (ObjRef, TypeEnv) {
        let o = self.fresh();
        let env = TypeEnv::new().bind(
            o,
            ObjectType { reference: o, class: self.program.main.name.clone(), usage: Usage::End },
            init_types(&self.program.main.fields),
        );
        (o, env)
    }

    /// Checks the whole program: builds Γ0, checks the main body under empty
    /// Θ and Ω, and requires every protocol to be finished at the end.
    pub fn check_program(&mut self) -> Result<CheckReport, Vec<TypeDiagnostic>> {
        let main_span = self.program.main.span;
        let Some(main_method) = self.program.main_method() else {
            return Err(vec![TypeDiagnostic::new(
                DiagKind::Internal { detail: "Main class has no main method".into() },
                "Main",
                main_span,
            )]);
        };
        let (o_main, env0) = self.initial_env();
        let body = ast::subst_this(&main_method.body, o_main);

        let result = self
            .check_expr(&RecEnv::new(), &LabelEnv::new(), &env0, &body, false)
            .map_err(|d| vec![d])?;
        let (ty, final_env) = match result {
            CheckResult::Done(t, g) => (t, g),
            CheckResult::Pending => {
                return Err(vec![TypeDiagnostic::new(
                    DiagKind::Internal { detail: "main body reduced to a pending result".into() },
                    "Main",
                    main_span,
                )])
            }
        };

        if !term(&final_env) {
            let mut diags = Vec::new();
            for (o, entry) in final_env.iter() {
                if !usage::terminated(&entry.ty.usage).unwrap_or(false) {
                    diags.push(TypeDiagnostic::new(
                        DiagKind::UnfinishedProtocol {
                            object: o,
                            class: entry.ty.class.clone(),
                            usage: entry.ty.usage.clone(),
                        },
                        "Main",
                        main_span,
                    ));
                }
            }
            return Err(diags);
        }

        self.record("Main", main_span, &final_env);
        Ok(CheckReport {
            result: ty,
            final_env,
            trace: std::mem::take(&mut self.trace),
            expansions: std::mem::take(&mut self.expansions),
        })
    }

    /// Checks a run-time expression against an arbitrary environment, with
    /// fresh references allocated above everything already mentioned. Used by
    /// the subject-reduction harness to re-check residual expressions.
    pub fn check_runtime_expr(
        &mut self,
        env: &TypeEnv,
        e: &Expr,
    ) -> Result<(ValueType, TypeEnv), TypeDiagnostic> {
        let floor = env
            .max_ref()
            .into_iter()
            .chain(ast::max_ref(e))
            .map(|o| o.0 + 1)
            .max()
            .unwrap_or(0);
        self.next_ref = self.next_ref.max(floor);
        match self.check_expr(&RecEnv::new(), &LabelEnv::new(), env, e, false)? {
            CheckResult::Done(t, g) => Ok((t, g)),
            CheckResult::Pending => Err(TypeDiagnostic::new(
                DiagKind::Internal { detail: "top-level expression reduced to pending".into() },
                "Main",
                e.span,
            )),
        }
    }

    pub fn trace(&self) -> &[RuleTrace] {
        &self.trace
    }

    /// Θ;Ω;Γ ⊢ e : T ⊣ Γ′. `want_link` is set when the result feeds a match
    /// scrutinee, making enum literals type as links.
    pub fn check_expr(
        &mut self,
        theta: &RecEnv,
        omega: &LabelEnv,
        env: &TypeEnv,
        e: &Expr,
        want_link: bool,
    ) -> CResult {
        match &e.kind {
            ExprKind::Unit => {
                self.record("Unit", e.span, env);
                Ok(CheckResult::Done(ValueType::Void, env.clone()))
            }
            ExprKind::Bool(_) => {
                self.record("Bool", e.span, env);
                Ok(CheckResult::Done(ValueType::Bool, env.clone()))
            }
            ExprKind::Null => {
                self.record("Null", e.span, env);
                Ok(CheckResult::Done(ValueType::Bot, env.clone()))
            }
            ExprKind::Float(_) => {
                self.record("Float", e.span, env);
                Ok(CheckResult::Done(ValueType::Float, env.clone()))
            }
            ExprKind::Stub(stub) => {
                let t = match stub {
                    BaseStub::Bool => ValueType::Bool,
                    BaseStub::Void => ValueType::Void,
                    BaseStub::Float => ValueType::Float,
                    BaseStub::Bot => ValueType::Bot,
                    BaseStub::Enum(l) => ValueType::Enum(l.clone()),
                };
                self.record("Stub", e.span, env);
                Ok(CheckResult::Done(t, env.clone()))
            }
            ExprKind::ObjRef(o) => {
                let entry = self.lookup(env, *o, "Obj", e.span)?;
                let t = ValueType::Obj(entry.ty.clone());
                self.record("Obj", e.span, env);
                Ok(CheckResult::Done(t, env.clone()))
            }
            ExprKind::EnumLit(owner, label) => {
                let o = self.owner_ref(*owner, "Enum", e.span)?;
                let enum_name = self.resolve_enum(label, "Enum", e.span)?;
                if want_link {
                    self.record("Enum", e.span, env);
                    Ok(CheckResult::Done(ValueType::Link(enum_name, o), env.clone()))
                } else {
                    self.record("Const", e.span, env);
                    Ok(CheckResult::Done(ValueType::Enum(enum_name), env.clone()))
                }
            }
            ExprKind::Field(owner, field) => {
                let o = self.owner_ref(*owner, "Field", e.span)?;
                let entry = self.lookup(env, o, "Field", e.span)?;
                let Some(z) = entry.fields.get(field) else {
                    return Err(TypeDiagnostic::new(
                        DiagKind::UnknownField { class: entry.ty.class.clone(), field: field.clone() },
                        "Field",
                        e.span,
                    ));
                };
                let t = get_type(z, env).map_err(|err| {
                    TypeDiagnostic::new(
                        DiagKind::Internal { detail: err.to_string() },
                        "Field",
                        e.span,
                    )
                })?;
                self.record("Field", e.span, env);
                Ok(CheckResult::Done(t, env.clone()))
            }
            ExprKind::Param => Err(TypeDiagnostic::new(
                DiagKind::Internal { detail: "parameter occurrence was not substituted".into() },
                "Field",
                e.span,
            )),
            ExprKind::Assign(owner, field, value) => {
                self.check_assign(theta, omega, env, e, *owner, field, value)
            }
            ExprKind::AssignNew(owner, field, class) => {
                self.check_new(env, e, *owner, field, class)
            }
            ExprKind::Seq(a, b) => {
                let ra = self.check_expr(theta, omega, env, a, false)?;
                let (_, env1) = self.expect_done(ra, "Comp", a.span)?;
                let rb = self.check_expr(theta, omega, &env1, b, want_link)?;
                self.record("Comp", e.span, if let CheckResult::Done(_, g) = &rb { g } else { &env1 });
                Ok(rb)
            }
            ExprKind::If(cond, then_e, else_e) => {
                self.check_if(theta, omega, env, e, cond, then_e, else_e, want_link)
            }
            ExprKind::Match(scrut, arms) => {
                self.check_match(theta, omega, env, e, scrut, arms, want_link)
            }
            ExprKind::Label(k, body) => {
                let mut omega2 = omega.clone();
                omega2.insert(k.clone(), env.clone());
                let r = self.check_expr(theta, &omega2, env, body, want_link)?;
                let (t, g) = self.expect_done(r, "Label", e.span)?;
                self.record("Label", e.span, &g);
                Ok(CheckResult::Done(t, g))
            }
            ExprKind::Continue(k) => {
                let Some(snapshot) = omega.get(k) else {
                    return Err(TypeDiagnostic::new(
                        DiagKind::Internal { detail: format!("free loop label `{k}`") },
                        "Continue",
                        e.span,
                    ));
                };
                if !env_equal(snapshot, env) {
                    let detail = env_diff(snapshot, env).unwrap_or_default();
                    return Err(TypeDiagnostic::new(
                        DiagKind::ContinueEnvMismatch { label: k.clone(), detail },
                        "Continue",
                        e.span,
                    ));
                }
                self.record("Continue", e.span, env);
                Ok(CheckResult::Pending)
            }
            ExprKind::Call(recv, method, arg) => {
                self.check_call(theta, omega, env, e, recv, method, arg, want_link)
            }
            ExprKind::FloatBin(_, lhs, rhs) => {
                let r1 = self.check_expr(theta, omega, env, lhs, false)?;
                let (t1, env1) = self.expect_done(r1, "FloatOp", lhs.span)?;
                if t1 != ValueType::Float {
                    return Err(TypeDiagnostic::new(
                        DiagKind::FloatOperand { found: t1.to_string() },
                        "FloatOp",
                        lhs.span,
                    ));
                }
                let r2 = self.check_expr(theta, omega, &env1, rhs, false)?;
                let (t2, env2) = self.expect_done(r2, "FloatOp", rhs.span)?;
                if t2 != ValueType::Float {
                    return Err(TypeDiagnostic::new(
                        DiagKind::FloatOperand { found: t2.to_string() },
                        "FloatOp",
                        rhs.span,
                    ));
                }
                self.record("FloatOp", e.span, &env2);
                Ok(CheckResult::Done(ValueType::Float, env2))
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn check_assign(
        &mut self,
        theta: &RecEnv,
        omega: &LabelEnv,
        env: &TypeEnv,
        e: &Expr,
        owner: Owner,
        field: &str,
        value: &Expr,
    ) -> CResult {
        let r = self.check_expr(theta, omega, env, value, false)?;
        let (t, env1) = self.expect_done(r, "Assign", value.span)?;
        let o = self.owner_ref(owner, "Assign", e.span)?;
        let entry = self.lookup(&env1, o, "Assign", e.span)?;
        let class_name = entry.ty.class.clone();
        let Some(class) = self.program.class(&class_name) else {
            return Err(TypeDiagnostic::new(
                DiagKind::UnknownClass { name: class_name },
                "Assign",
                e.span,
            ));
        };
        let Some(fd) = class.field(field) else {
            return Err(TypeDiagnostic::new(
                DiagKind::UnknownField { class: class_name, field: field.to_string() },
                "Assign",
                e.span,
            ));
        };
        if !agree(&fd.ty, &t) {
            return Err(TypeDiagnostic::new(
                DiagKind::AssignMismatch {
                    field: field.to_string(),
                    expected: fd.ty.to_string(),
                    found: t.to_string(),
                },
                "Assign",
                e.span,
            ));
        }
        let z = vtype(&t).map_err(|_| {
            let (l, obj) = match &t {
                ValueType::Link(l, o) => (l.clone(), *o),
                _ => (String::new(), o),
            };
            TypeDiagnostic::new(
                DiagKind::LinkNotStorable { enum_name: l, object: obj },
                "Assign",
                e.span,
            )
        })?;
        let env2 = env1.update_field(o, field, z);
        self.record("Assign", e.span, &env2);
        Ok(CheckResult::Done(ValueType::Void, env2))
    }

    fn check_new(
        &mut self,
        env: &TypeEnv,
        e: &Expr,
        owner: Owner,
        field: &str,
        class_name: &str,
    ) -> CResult {
        let Some(class) = self.program.class(class_name) else {
            return Err(TypeDiagnostic::new(
                DiagKind::UnknownClass { name: class_name.to_string() },
                "New",
                e.span,
            ));
        };
        let o = self.owner_ref(owner, "New", e.span)?;
        let entry = self.lookup(env, o, "New", e.span)?;
        let owner_class_name = entry.ty.class.clone();
        let Some(owner_class) = self.program.class(&owner_class_name) else {
            return Err(TypeDiagnostic::new(
                DiagKind::UnknownClass { name: owner_class_name },
                "New",
                e.span,
            ));
        };
        let Some(fd) = owner_class.field(field) else {
            return Err(TypeDiagnostic::new(
                DiagKind::UnknownField { class: owner_class_name, field: field.to_string() },
                "New",
                e.span,
            ));
        };
        if fd.ty != TypeAnnot::Class(class_name.to_string()) {
            return Err(TypeDiagnostic::new(
                DiagKind::AssignMismatch {
                    field: field.to_string(),
                    expected: fd.ty.to_string(),
                    found: format!("new {class_name}"),
                },
                "New",
                e.span,
            ));
        }
        let fresh = self.fresh();
        let env1 = env.bind(
            fresh,
            ObjectType {
                reference: fresh,
                class: class_name.to_string(),
                usage: class.usage.clone(),
            },
            init_types(&class.fields),
        );
        let env2 = env1.update_field(o, field, FieldType::Ref(fresh));
        self.record("New", e.span, &env2);
        Ok(CheckResult::Done(ValueType::Void, env2))
    }

    #[allow(clippy::too_many_arguments)]
    fn check_if(
        &mut self,
        theta: &RecEnv,
        omega: &LabelEnv,
        env: &TypeEnv,
        e: &Expr,
        cond: &Expr,
        then_e: &Expr,
        else_e: &Expr,
        want_link: bool,
    ) -> CResult {
        let rc = self.check_expr(theta, omega, env, cond, false)?;
        let (tc, env1) = self.expect_done(rc, "If", cond.span)?;
        if tc != ValueType::Bool {
            return Err(TypeDiagnostic::new(
                DiagKind::CondNotBool { found: tc.to_string() },
                "If",
                cond.span,
            ));
        }
        // Both branches start from the shared environment and the shared
        // fresh-reference counter, so allocations line up at the join.
        let mark = self.next_ref;
        let rt = self.check_expr(theta, omega, &env1, then_e, want_link)?;
        let after_then = self.next_ref;
        self.next_ref = mark;
        let rf = self.check_expr(theta, omega, &env1, else_e, want_link)?;
        let after_else = self.next_ref;

        let joined = self.join(rt, after_then, rf, after_else, mark, e.span)?;
        if let CheckResult::Done(_, g) = &joined {
            let g = g.clone();
            self.record("If", e.span, &g);
        } else {
            self.record("If", e.span, &env1);
        }
        Ok(joined)
    }

    #[allow(clippy::too_many_arguments)]
    fn check_match(
        &mut self,
        theta: &RecEnv,
        omega: &LabelEnv,
        env: &TypeEnv,
        e: &Expr,
        scrut: &Expr,
        arms: &[MatchArm],
        want_link: bool,
    ) -> CResult {
        let rs = self.check_expr(theta, omega, env, scrut, true)?;
        let (ts, env1) = self.expect_done(rs, "Case", scrut.span)?;
        let ValueType::Link(enum_name, obj) = ts else {
            return Err(TypeDiagnostic::new(
                DiagKind::LinkExpected { found: ts.to_string() },
                "Case",
                scrut.span,
            ));
        };
        let Some(decl) = self.program.enum_def(&enum_name) else {
            return Err(TypeDiagnostic::new(
                DiagKind::UnknownClass { name: enum_name },
                "Case",
                scrut.span,
            ));
        };
        let labels = decl.labels.clone();

        let mut seen = Vec::new();
        for arm in arms {
            if seen.contains(&arm.label) {
                return Err(TypeDiagnostic::new(
                    DiagKind::DuplicateArm { label: arm.label.clone() },
                    "Case",
                    arm.span,
                ));
            }
            if !labels.contains(&arm.label) {
                return Err(TypeDiagnostic::new(
                    DiagKind::UnknownLabel { label: arm.label.clone() },
                    "Case",
                    arm.span,
                ));
            }
            seen.push(arm.label.clone());
        }
        let missing: Vec<String> =
            labels.iter().filter(|l| !seen.contains(l)).cloned().collect();
        if !missing.is_empty() {
            return Err(TypeDiagnostic::new(
                DiagKind::NonExhaustiveMatch { enum_name, missing },
                "Case",
                e.span,
            ));
        }

        let current_usage = self.lookup(&env1, obj, "Case", e.span)?.ty.usage.clone();
        let mark = self.next_ref;
        let mut acc: Option<(CheckResult, u32)> = None;
        for label in &labels {
            let arm = arms.iter().find(|a| &a.label == label).unwrap();
            let stepped = match usage::usage_step(&current_usage, &UsageAction::Label(label.clone()))
            {
                Ok(Some(u)) => u,
                Ok(None) => {
                    return Err(TypeDiagnostic::new(
                        DiagKind::LabelNotAvailable {
                            object: obj,
                            label: label.clone(),
                            usage: current_usage,
                        },
                        "Case",
                        arm.span,
                    ))
                }
                Err(err) => {
                    return Err(TypeDiagnostic::new(
                        DiagKind::UsageIssue { detail: err.to_string() },
                        "Case",
                        arm.span,
                    ))
                }
            };
            let env_arm = env1.update_usage(obj, stepped);
            self.next_ref = mark;
            let r = self.check_expr(theta, omega, &env_arm, &arm.body, want_link)?;
            let after = self.next_ref;
            acc = Some(match acc {
                None => (r, after),
                Some((prev, prev_ctr)) => {
                    let j = self.join(prev, prev_ctr, r, after, mark, arm.span)?;
                    let ctr = self.next_ref;
                    (j, ctr)
                }
            });
        }
        let (result, ctr) = acc.expect("match arms are non-empty");
        self.next_ref = ctr;
        if let CheckResult::Done(_, g) = &result {
            let g = g.clone();
            self.record("Case", e.span, &g);
        } else {
            self.record("Case", e.span, &env1);
        }
        Ok(result)
    }

    /// Join of two branch results. Done results must agree on the value type
    /// (up to usage bisimilarity for object types) and on the output
    /// environment; a pending result adopts its sibling.
    fn join(
        &mut self,
        a: CheckResult,
        ctr_a: u32,
        b: CheckResult,
        ctr_b: u32,
        mark: u32,
        span: Span,
    ) -> CResult {
        match (a, b) {
            (CheckResult::Pending, CheckResult::Pending) => {
                self.next_ref = mark;
                Ok(CheckResult::Pending)
            }
            (CheckResult::Pending, done) => {
                self.next_ref = ctr_b;
                Ok(done)
            }
            (done, CheckResult::Pending) => {
                self.next_ref = ctr_a;
                Ok(done)
            }
            (CheckResult::Done(t1, g1), CheckResult::Done(t2, g2)) => {
                if !types_join(&t1, &t2) {
                    return Err(TypeDiagnostic::new(
                        DiagKind::BranchMismatch {
                            detail: format!("result types {t1} and {t2}"),
                        },
                        "If",
                        span,
                    ));
                }
                if !env_equal(&g1, &g2) {
                    let detail = env_diff(&g1, &g2).unwrap_or_default();
                    return Err(TypeDiagnostic::new(
                        DiagKind::BranchMismatch { detail },
                        "If",
                        span,
                    ));
                }
                self.next_ref = ctr_a;
                Ok(CheckResult::Done(t1, g1))
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn check_call(
        &mut self,
        theta: &RecEnv,
        omega: &LabelEnv,
        env: &TypeEnv,
        e: &Expr,
        recv: &Receiver,
        method: &str,
        arg: &Expr,
        want_link: bool,
    ) -> CResult {
        let ra = self.check_expr(theta, omega, env, arg, false)?;
        let (ta, env1) = self.expect_done(ra, "Call-d", arg.span)?;

        let (callee, direct) = match recv {
            Receiver::Obj(o) => (*o, true),
            Receiver::Field(owner, f) => {
                let o = self.owner_ref(*owner, "Call-ind", e.span)?;
                let entry = self.lookup(&env1, o, "Call-ind", e.span)?;
                match entry.fields.get(f) {
                    Some(FieldType::Ref(o2)) => (*o2, false),
                    Some(FieldType::Bot) => {
                        return Err(TypeDiagnostic::new(
                            DiagKind::NullReceiver { object: o, field: f.clone() },
                            "Call-ind",
                            e.span,
                        ))
                    }
                    Some(z) => {
                        return Err(TypeDiagnostic::new(
                            DiagKind::ReceiverNotObject {
                                detail: format!("field `{f}` holds {z}"),
                            },
                            "Call-ind",
                            e.span,
                        ))
                    }
                    None => {
                        return Err(TypeDiagnostic::new(
                            DiagKind::UnknownField {
                                class: entry.ty.class.clone(),
                                field: f.clone(),
                            },
                            "Call-ind",
                            e.span,
                        ))
                    }
                }
            }
            Receiver::Param => {
                return Err(TypeDiagnostic::new(
                    DiagKind::ReceiverNotObject {
                        detail: "parameter is bound to a base value or null".into(),
                    },
                    "Call-d",
                    e.span,
                ))
            }
            Receiver::This => {
                return Err(TypeDiagnostic::new(
                    DiagKind::Internal { detail: "`this` receiver was not substituted".into() },
                    "Call-d",
                    e.span,
                ))
            }
        };
        let rule: &'static str = if direct { "Call-d" } else { "Call-ind" };
        let rec_rule: &'static str = if direct { "Call-d-rec" } else { "Call-ind-rec" };

        let entry = self.lookup(&env1, callee, rule, e.span)?;
        let class_name = entry.ty.class.clone();
        let current_usage = entry.ty.usage.clone();
        let Some(class) = self.program.class(&class_name) else {
            return Err(TypeDiagnostic::new(
                DiagKind::UnknownClass { name: class_name },
                rule,
                e.span,
            ));
        };
        let Some(md) = class.method(method) else {
            return Err(TypeDiagnostic::new(
                DiagKind::UnknownMethod { class: class_name, method: method.to_string() },
                rule,
                e.span,
            ));
        };
        let stepped = match usage::usage_step(&current_usage, &UsageAction::Method(method.into())) {
            Ok(Some(u)) => u,
            Ok(None) => {
                return Err(TypeDiagnostic::new(
                    DiagKind::MethodNotAvailable {
                        object: callee,
                        method: method.to_string(),
                        usage: current_usage,
                    },
                    rule,
                    e.span,
                ))
            }
            Err(err) => {
                return Err(TypeDiagnostic::new(
                    DiagKind::UsageIssue { detail: err.to_string() },
                    rule,
                    e.span,
                ))
            }
        };
        if !agree(&md.param_ty, &ta) {
            return Err(TypeDiagnostic::new(
                DiagKind::ArgumentMismatch {
                    method: method.to_string(),
                    expected: md.param_ty.clone(),
                    found: ta.to_string(),
                },
                rule,
                e.span,
            ));
        }

        // Γ''' installs the post-step usage; it is both the environment the
        // body is checked under and the snapshot recorded in Θ.
        let env_call = env1.update_usage(callee, stepped);

        if let Some(snapshot) = theta.get(&(callee, method.to_string())) {
            if env_equal(snapshot, &env_call) {
                if self.base_skips_left > 0 {
                    self.base_skips_left -= 1;
                } else {
                    self.record(rec_rule, e.span, &env_call);
                    return Ok(CheckResult::Pending);
                }
            }
        }

        if self.expansion_depth >= self.options.max_expansion_depth {
            return Err(TypeDiagnostic::new(
                DiagKind::RecursiveEnvMismatch { object: callee, method: method.to_string() },
                rule,
                e.span,
            ));
        }
        self.expansion_depth += 1;
        *self.expansions.entry((callee, method.to_string())).or_insert(0) += 1;

        let mut theta2 = theta.clone();
        theta2.insert((callee, method.to_string()), env_call.clone());

        let value = self.argument_value_form(&ta, arg);
        let body = ast::subst_param(&ast::subst_this(&md.body, callee), &value);

        let ret_ty = md.ret_ty.clone();
        let rb = self.check_expr(&theta2, omega, &env_call, &body, want_link);
        self.expansion_depth -= 1;
        let (tr, env_out) = self.expect_done(rb?, rule, e.span)?;

        if !returns(&ret_ty, &tr) {
            return Err(TypeDiagnostic::new(
                DiagKind::ReturnMismatch {
                    method: method.to_string(),
                    expected: ret_ty,
                    found: tr.to_string(),
                },
                rule,
                e.span,
            ));
        }
        self.record(rule, e.span, &env_out);
        Ok(CheckResult::Done(tr, env_out))
    }

    /// The value form substituted for the parameter: object arguments
    /// substitute their reference, literal base arguments substitute
    /// themselves, and non-literal base arguments substitute a typed stub.
    fn argument_value_form(&self, t: &ValueType, arg: &Expr) -> Expr {
        let span = arg.span;
        let kind = match t {
            ValueType::Obj(o) => ExprKind::ObjRef(o.reference),
            ValueType::Bot => ExprKind::Null,
            _ if is_value_expr(arg) => arg.kind.clone(),
            ValueType::Bool => ExprKind::Stub(BaseStub::Bool),
            ValueType::Void => ExprKind::Stub(BaseStub::Void),
            ValueType::Float => ExprKind::Stub(BaseStub::Float),
            ValueType::Enum(l) => ExprKind::Stub(BaseStub::Enum(l.clone())),
            ValueType::Link(..) => ExprKind::Stub(BaseStub::Void),
        };
        Expr::new(kind, span)
    }

    fn expect_done(
        &mut self,
        r: CheckResult,
        rule: &'static str,
        span: Span,
    ) -> Result<(ValueType, TypeEnv), TypeDiagnostic> {
        match r {
            CheckResult::Done(t, g) => Ok((t, g)),
            CheckResult::Pending => Err(TypeDiagnostic::new(
                DiagKind::Internal {
                    detail: "pending result escaped into a value position".into(),
                },
                rule,
                span,
            )),
        }
    }

    fn owner_ref(
        &self,
        owner: Owner,
        rule: &'static str,
        span: Span,
    ) -> Result<ObjRef, TypeDiagnostic> {
        match owner {
            Owner::Obj(o) => Ok(o),
            Owner::This => Err(TypeDiagnostic::new(
                DiagKind::Internal { detail: "`this` was not substituted".into() },
                rule,
                span,
            )),
        }
    }

    fn lookup<'e>(
        &self,
        env: &'e TypeEnv,
        o: ObjRef,
        rule: &'static str,
        span: Span,
    ) -> Result<&'e crate::typeenv::ObjEntry, TypeDiagnostic> {
        env.get(o).ok_or_else(|| {
            TypeDiagnostic::new(DiagKind::UnknownObject { object: o }, rule, span)
        })
    }

    fn resolve_enum(
        &self,
        label: &str,
        rule: &'static str,
        span: Span,
    ) -> Result<String, TypeDiagnostic> {
        let candidates = self.program.enums_with_label(label);
        match candidates.len() {
            0 => Err(TypeDiagnostic::new(
                DiagKind::UnknownLabel { label: label.to_string() },
                rule,
                span,
            )),
            1 => Ok(candidates[0].name.clone()),
            _ => Err(TypeDiagnostic::new(
                DiagKind::AmbiguousLabel {
                    label: label.to_string(),
                    enums: candidates.iter().map(|e| e.name.clone()).collect(),
                },
                rule,
                span,
            )),
        }
    }
}

/// Value-type agreement at joins: identical references and classes with
/// bisimilar usages for objects, equality otherwise.
pub fn types_join(a: &ValueType, b: &ValueType) -> bool {
    match (a, b) {
        (ValueType::Obj(x), ValueType::Obj(y)) => {
            x.reference == y.reference
                && x.class == y.class
                && usage::bisimilar(&x.usage, &y.usage).unwrap_or(false)
        }
        _ => a == b,
    }
}

fn is_value_expr(e: &Expr) -> bool {
    matches!(
        &e.kind,
        ExprKind::Unit
            | ExprKind::Null
            | ExprKind::Bool(_)
            | ExprKind::Float(_)
            | ExprKind::ObjRef(_)
            | ExprKind::Stub(_)
            | ExprKind::EnumLit(Owner::Obj(_), _)
    )
}

/// Convenience entry point: checks a program with default options.
pub fn check_program(p: &Program) -> Result<CheckReport, Vec<TypeDiagnostic>> {
    Checker::new(p).check_program()
}
