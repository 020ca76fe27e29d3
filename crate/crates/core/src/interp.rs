//! Labelled small-step execution over heaps, plus the runtime protocol
//! monitor.
//!
//! Configurations pair a heap with a run-time expression. Evaluation contexts
//! are realized structurally: each composite form steps its active
//! sub-expression first and reports the base rule that finally fired. Method
//! calls and match selections carry labels (`o.m`, `o#l`); every other step
//! is ε. Allocation reaches the monitor through a side channel in the step
//! effect, since `new` itself is an ε-step but completion quantifies over all
//! allocated objects.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::ast::{self, Expr, ExprKind, FieldDecl, FloatOp, ObjRef, Owner, Program, Receiver};
use crate::ast::{TypeAnnot, Usage};
use crate::diag::Span;
use crate::typeenv::{EnvLabel, FieldType, TypeEnv, ValueType};
use crate::usage::{self, UsageAction};

/// A run-time value. Enum values carry the object whose choice usage their
/// label resolves; for field initializers that object is the owner itself,
/// which is inert because stored enums are never matched on.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Obj(ObjRef),
    Bool(bool),
    Unit,
    Null,
    Float(f64),
    Enum(ObjRef, String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Obj(o) => write!(f, "{o}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Unit => write!(f, "unit"),
            Value::Null => write!(f, "null"),
            Value::Float(v) => write!(f, "{v}"),
            Value::Enum(_, l) => write!(f, "{l}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjCell {
    pub class: String,
    pub fields: BTreeMap<String, Value>,
}

/// The concrete heap: object references to class and field values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Heap {
    map: BTreeMap<ObjRef, ObjCell>,
}

impl Heap {
    pub fn get(&self, o: ObjRef) -> Option<&ObjCell> {
        self.map.get(&o)
    }

    pub fn domain(&self) -> impl Iterator<Item = ObjRef> + '_ {
        self.map.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ObjRef, &ObjCell)> {
        self.map.iter().map(|(o, c)| (*o, c))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn insert(&self, o: ObjRef, cell: ObjCell) -> Heap {
        let mut map = self.map.clone();
        map.insert(o, cell);
        Heap { map }
    }

    pub fn set_field(&self, o: ObjRef, field: &str, v: Value) -> Heap {
        let mut map = self.map.clone();
        if let Some(cell) = map.get_mut(&o) {
            cell.fields.insert(field.to_string(), v);
        }
        Heap { map }
    }
}

/// Renders one binding per line: `o1 ↦ (BankAccount, {amount ↦ 105})`.
impl fmt::Display for Heap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (o, cell)) in self.map.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{} ↦ ({}, {{", o, cell.class)?;
            for (j, (name, v)) in cell.fields.iter().enumerate() {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{name} ↦ {v}")?;
            }
            write!(f, "}})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Config {
    pub heap: Heap,
    pub expr: Expr,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error("no reduction rule applies at {span:?}: {detail}")]
    Stuck { detail: String, span: Span },
    #[error("null dereference: field `{field}` of {object}")]
    NullDereference { object: ObjRef, field: String, span: Span },
    #[error("fuel exhausted after {steps} steps")]
    FuelExhausted { steps: u64 },
    #[error("protocol violation: {0}")]
    Monitor(#[from] MonitorViolation),
    #[error("unknown enum `{0}`")]
    UnknownEnum(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("object {object} cannot perform {action} in state {usage}")]
pub struct MonitorViolation {
    pub object: ObjRef,
    pub action: UsageAction,
    pub usage: Usage,
}

/// Tracks the current usage of every allocated object and checks each
/// emitted label against it.
#[derive(Debug, Clone, Default)]
pub struct Monitor {
    map: BTreeMap<ObjRef, Usage>,
}

impl Monitor {
    pub fn new() -> Self {
        Monitor::default()
    }

    pub fn usage_of(&self, o: ObjRef) -> Option<&Usage> {
        self.map.get(&o)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ObjRef, &Usage)> {
        self.map.iter().map(|(o, u)| (*o, u))
    }

    /// Registers a freshly allocated object with its class's declared usage.
    pub fn track(&mut self, o: ObjRef, usage: Usage) {
        self.map.insert(o, usage);
    }

    /// Steps the tracked usage of the labelled object; ε leaves the monitor
    /// unchanged.
    pub fn step_label(&mut self, label: &EnvLabel) -> Result<(), MonitorViolation> {
        let Some((obj, action)) = label.action() else { return Ok(()) };
        let current = self.map.get(&obj).cloned().unwrap_or(Usage::End);
        match usage::usage_step(&current, &action) {
            Ok(Some(next)) => {
                self.map.insert(obj, next);
                Ok(())
            }
            _ => Err(MonitorViolation { object: obj, action, usage: current }),
        }
    }

    /// True iff every tracked object's protocol is finished.
    pub fn check_completion(&self) -> bool {
        self.map.values().all(|u| usage::terminated(u).unwrap_or(false))
    }
}

/// Initial field values: class fields start null, bools false, voids unit,
/// floats 0.0, and enum fields at the enum's first declared label.
pub fn init_vals(
    p: &Program,
    fields: &[FieldDecl],
    owner: ObjRef,
) -> Result<BTreeMap<String, Value>, RuntimeError> {
    let mut map = BTreeMap::new();
    for f in fields {
        let v = match &f.ty {
            TypeAnnot::Class(_) => Value::Null,
            TypeAnnot::Bool => Value::Bool(false),
            TypeAnnot::Void => Value::Unit,
            TypeAnnot::Float => Value::Float(0.0),
            TypeAnnot::Enum(name) => {
                let decl = p
                    .enum_def(name)
                    .ok_or_else(|| RuntimeError::UnknownEnum(name.clone()))?;
                Value::Enum(owner, decl.labels[0].clone())
            }
        };
        map.insert(f.name.clone(), v);
    }
    Ok(map)
}

/// What a step did to the heap, for the monitor's allocation side channel and
/// for replaying typing-environment transitions.
#[derive(Debug, Clone, PartialEq)]
pub enum StepEffect {
    None,
    Assign { object: ObjRef, field: String, value: Value },
    Alloc { object: ObjRef, field: String, fresh: ObjRef, class: String },
}

#[derive(Debug, Clone)]
pub struct StepOut {
    pub label: EnvLabel,
    pub rule: &'static str,
    pub effect: StepEffect,
    pub config: Config,
}

/// The ten base reduction rules (the congruence rule for evaluation contexts
/// is implicit in the step function).
pub const REDUCTION_RULES: [&str; 10] = [
    "assign", "seq", "if-true", "if-false", "lab", "match", "call-d", "call-ind", "new", "fld",
];

pub struct Interp<'p> {
    program: &'p Program,
    next_ref: u32,
}

impl<'p> Interp<'p> {
    pub fn new(program: &'p Program) -> Self {
        Interp { program, next_ref: 0 }
    }

    fn fresh(&mut self) -> ObjRef {
        let o = ObjRef(self.next_ref);
        self.next_ref += 1;
        o
    }

    /// Builds the initial configuration: a fresh main object with initial
    /// field values, and the main body with `this` substituted. The monitor
    /// starts with the main object past its `main` step.
    pub fn initial(&mut self) -> Result<(Config, Monitor), RuntimeError> {
        let main = &self.program.main;
        let o = self.fresh();
        let heap = Heap::default().insert(
            o,
            ObjCell { class: main.name.clone(), fields: init_vals(self.program, &main.fields, o)? },
        );
        let body = self
            .program
            .main_method()
            .map(|m| ast::subst_this(&m.body, o))
            .unwrap_or_else(|| Expr::new(ExprKind::Unit, Span::synthetic()));
        let mut monitor = Monitor::new();
        let entry_usage = usage::usage_step(&main.usage, &UsageAction::Method("main".into()))
            .ok()
            .flatten()
            .unwrap_or(Usage::End);
        monitor.track(o, entry_usage);
        Ok((Config { heap, expr: body }, monitor))
    }

    /// One labelled step, or `None` when the expression is a value.
    pub fn step(&mut self, c: &Config) -> Result<Option<StepOut>, RuntimeError> {
        if is_value(&c.expr) {
            return Ok(None);
        }
        let (label, rule, effect, heap, expr) = self.step_expr(&c.heap, &c.expr)?;
        Ok(Some(StepOut { label, rule, effect, config: Config { heap, expr } }))
    }

    #[allow(clippy::type_complexity)]
    fn step_expr(
        &mut self,
        heap: &Heap,
        e: &Expr,
    ) -> Result<(EnvLabel, &'static str, StepEffect, Heap, Expr), RuntimeError> {
        let span = e.span;
        match &e.kind {
            ExprKind::Seq(a, b) => {
                if is_value(a) {
                    Ok((EnvLabel::Eps, "seq", StepEffect::None, heap.clone(), (**b).clone()))
                } else {
                    let (l, r, eff, h, a2) = self.step_expr(heap, a)?;
                    let e2 = ExprKind::Seq(Box::new(a2), b.clone());
                    Ok((l, r, eff, h, Expr::new(e2, span)))
                }
            }
            ExprKind::Assign(owner, field, value) => {
                let o = owner_ref(*owner, span)?;
                if is_value(value) {
                    let v = expr_to_value(value).expect("checked is_value");
                    let cell = heap.get(o).ok_or_else(|| stuck(span, format!("{o} not in heap")))?;
                    if !cell.fields.contains_key(field) {
                        return Err(stuck(span, format!("{o} has no field `{field}`")));
                    }
                    let h = heap.set_field(o, field, v.clone());
                    Ok((
                        EnvLabel::Eps,
                        "assign",
                        StepEffect::Assign { object: o, field: field.clone(), value: v },
                        h,
                        Expr::new(ExprKind::Unit, span),
                    ))
                } else {
                    let (l, r, eff, h, v2) = self.step_expr(heap, value)?;
                    let e2 = ExprKind::Assign(*owner, field.clone(), Box::new(v2));
                    Ok((l, r, eff, h, Expr::new(e2, span)))
                }
            }
            ExprKind::AssignNew(owner, field, class_name) => {
                let o = owner_ref(*owner, span)?;
                let class = self
                    .program
                    .class(class_name)
                    .ok_or_else(|| stuck(span, format!("unknown class `{class_name}`")))?;
                let fresh = self.fresh();
                let cell = ObjCell {
                    class: class_name.clone(),
                    fields: init_vals(self.program, &class.fields, fresh)?,
                };
                let h = heap.insert(fresh, cell).set_field(o, field, Value::Obj(fresh));
                Ok((
                    EnvLabel::Eps,
                    "new",
                    StepEffect::Alloc {
                        object: o,
                        field: field.clone(),
                        fresh,
                        class: class_name.clone(),
                    },
                    h,
                    Expr::new(ExprKind::Unit, span),
                ))
            }
            ExprKind::Field(owner, field) => {
                let o = owner_ref(*owner, span)?;
                let cell = heap.get(o).ok_or_else(|| stuck(span, format!("{o} not in heap")))?;
                let v = cell
                    .fields
                    .get(field)
                    .ok_or_else(|| stuck(span, format!("{o} has no field `{field}`")))?;
                Ok((EnvLabel::Eps, "fld", StepEffect::None, heap.clone(), value_to_expr(v, span)))
            }
            ExprKind::If(cond, t, f) => {
                if is_value(cond) {
                    match &cond.kind {
                        ExprKind::Bool(true) => Ok((
                            EnvLabel::Eps,
                            "if-true",
                            StepEffect::None,
                            heap.clone(),
                            (**t).clone(),
                        )),
                        ExprKind::Bool(false) => Ok((
                            EnvLabel::Eps,
                            "if-false",
                            StepEffect::None,
                            heap.clone(),
                            (**f).clone(),
                        )),
                        _ => Err(stuck(cond.span, "condition is not a boolean".into())),
                    }
                } else {
                    let (l, r, eff, h, c2) = self.step_expr(heap, cond)?;
                    let e2 = ExprKind::If(Box::new(c2), t.clone(), f.clone());
                    Ok((l, r, eff, h, Expr::new(e2, span)))
                }
            }
            ExprKind::Match(scrut, arms) => {
                if is_value(scrut) {
                    let ExprKind::EnumLit(Owner::Obj(o), label) = &scrut.kind else {
                        return Err(stuck(scrut.span, "match scrutinee is not an enum value".into()));
                    };
                    let arm = arms
                        .iter()
                        .find(|a| &a.label == label)
                        .ok_or_else(|| stuck(span, format!("no arm for label `{label}`")))?;
                    Ok((
                        EnvLabel::Choice(*o, label.clone()),
                        "match",
                        StepEffect::None,
                        heap.clone(),
                        arm.body.clone(),
                    ))
                } else {
                    let (l, r, eff, h, s2) = self.step_expr(heap, scrut)?;
                    let e2 = ExprKind::Match(Box::new(s2), arms.clone());
                    Ok((l, r, eff, h, Expr::new(e2, span)))
                }
            }
            ExprKind::Label(k, body) => {
                let unfolded = ast::subst_continue(body, k, e);
                Ok((EnvLabel::Eps, "lab", StepEffect::None, heap.clone(), unfolded))
            }
            ExprKind::Call(recv, method, arg) => {
                if !is_value(arg) {
                    let (l, r, eff, h, a2) = self.step_expr(heap, arg)?;
                    let e2 = ExprKind::Call(recv.clone(), method.clone(), Box::new(a2));
                    return Ok((l, r, eff, h, Expr::new(e2, span)));
                }
                let (callee, rule) = match recv {
                    Receiver::Obj(o) => (*o, "call-d"),
                    Receiver::Field(owner, f) => {
                        let o = owner_ref(*owner, span)?;
                        let cell =
                            heap.get(o).ok_or_else(|| stuck(span, format!("{o} not in heap")))?;
                        match cell.fields.get(f) {
                            Some(Value::Obj(o2)) => (*o2, "call-ind"),
                            Some(Value::Null) => {
                                return Err(RuntimeError::NullDereference {
                                    object: o,
                                    field: f.clone(),
                                    span,
                                })
                            }
                            Some(v) => {
                                return Err(stuck(span, format!("field `{f}` holds {v}, not an object")))
                            }
                            None => return Err(stuck(span, format!("{o} has no field `{f}`"))),
                        }
                    }
                    Receiver::Param | Receiver::This => {
                        return Err(stuck(span, "receiver is not a concrete object".into()))
                    }
                };
                let cell =
                    heap.get(callee).ok_or_else(|| stuck(span, format!("{callee} not in heap")))?;
                let class = self
                    .program
                    .class(&cell.class)
                    .ok_or_else(|| stuck(span, format!("unknown class `{}`", cell.class)))?;
                let md = class.method(method).ok_or_else(|| {
                    stuck(span, format!("class `{}` has no method `{method}`", cell.class))
                })?;
                let v = value_to_expr(&expr_to_value(arg).expect("checked is_value"), arg.span);
                let body = ast::subst_param(&ast::subst_this(&md.body, callee), &v);
                Ok((
                    EnvLabel::Method(callee, method.clone()),
                    rule,
                    StepEffect::None,
                    heap.clone(),
                    body,
                ))
            }
            ExprKind::FloatBin(op, a, b) => {
                if !is_value(a) {
                    let (l, r, eff, h, a2) = self.step_expr(heap, a)?;
                    let e2 = ExprKind::FloatBin(*op, Box::new(a2), b.clone());
                    return Ok((l, r, eff, h, Expr::new(e2, span)));
                }
                if !is_value(b) {
                    let (l, r, eff, h, b2) = self.step_expr(heap, b)?;
                    let e2 = ExprKind::FloatBin(*op, a.clone(), Box::new(b2));
                    return Ok((l, r, eff, h, Expr::new(e2, span)));
                }
                match (&a.kind, &b.kind) {
                    (ExprKind::Float(x), ExprKind::Float(y)) => {
                        let (v, rule) = match op {
                            FloatOp::Mul => (x * y, "float-mul"),
                            FloatOp::Add => (x + y, "float-add"),
                        };
                        Ok((
                            EnvLabel::Eps,
                            rule,
                            StepEffect::None,
                            heap.clone(),
                            Expr::new(ExprKind::Float(v), span),
                        ))
                    }
                    _ => Err(stuck(span, "arithmetic on non-float values".into())),
                }
            }
            ExprKind::Continue(k) => Err(stuck(span, format!("free `continue {k}`"))),
            ExprKind::Param | ExprKind::Stub(_) => {
                Err(stuck(span, "open term cannot be evaluated".into()))
            }
            ExprKind::Unit
            | ExprKind::Null
            | ExprKind::Bool(_)
            | ExprKind::Float(_)
            | ExprKind::ObjRef(_)
            | ExprKind::EnumLit(..) => Err(stuck(span, "expression is already a value".into())),
        }
    }
}

fn stuck(span: Span, detail: String) -> RuntimeError {
    RuntimeError::Stuck { detail, span }
}

fn owner_ref(owner: Owner, span: Span) -> Result<ObjRef, RuntimeError> {
    match owner {
        Owner::Obj(o) => Ok(o),
        Owner::This => Err(stuck(span, "`this` was not substituted".into())),
    }
}

pub fn is_value(e: &Expr) -> bool {
    matches!(
        &e.kind,
        ExprKind::Unit
            | ExprKind::Null
            | ExprKind::Bool(_)
            | ExprKind::Float(_)
            | ExprKind::ObjRef(_)
            | ExprKind::EnumLit(Owner::Obj(_), _)
    )
}

pub fn expr_to_value(e: &Expr) -> Option<Value> {
    Some(match &e.kind {
        ExprKind::Unit => Value::Unit,
        ExprKind::Null => Value::Null,
        ExprKind::Bool(b) => Value::Bool(*b),
        ExprKind::Float(v) => Value::Float(*v),
        ExprKind::ObjRef(o) => Value::Obj(*o),
        ExprKind::EnumLit(Owner::Obj(o), l) => Value::Enum(*o, l.clone()),
        _ => return None,
    })
}

pub fn value_to_expr(v: &Value, span: Span) -> Expr {
    let kind = match v {
        Value::Unit => ExprKind::Unit,
        Value::Null => ExprKind::Null,
        Value::Bool(b) => ExprKind::Bool(*b),
        Value::Float(f) => ExprKind::Float(*f),
        Value::Obj(o) => ExprKind::ObjRef(*o),
        Value::Enum(o, l) => ExprKind::EnumLit(Owner::Obj(*o), l.clone()),
    };
    Expr::new(kind, span)
}

/// One record per executed step, serialized as a JSON line.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TraceRecord {
    pub step: u64,
    pub label: String,
    pub rule: &'static str,
}

#[derive(Debug)]
pub struct RunReport {
    pub trace: Vec<TraceRecord>,
    pub final_config: Config,
    pub monitor: Monitor,
    pub completed: bool,
    pub steps: u64,
}

impl RunReport {
    /// The non-ε labels of the run, in order.
    pub fn labels(&self) -> Vec<String> {
        self.trace.iter().filter(|r| r.label != "eps").map(|r| r.label.clone()).collect()
    }
}

/// Runs a program to a value under a fuel budget, monitoring every label and
/// tracking allocations. On reaching a value the monitor's completion check
/// is recorded in the report.
pub fn run(p: &Program, fuel: u64) -> Result<RunReport, RuntimeError> {
    let mut interp = Interp::new(p);
    let (mut config, mut monitor) = interp.initial()?;
    let mut trace = Vec::new();
    let mut steps: u64 = 0;
    loop {
        match interp.step(&config)? {
            None => break,
            Some(out) => {
                if steps >= fuel {
                    return Err(RuntimeError::FuelExhausted { steps });
                }
                if let StepEffect::Alloc { fresh, class, .. } = &out.effect {
                    let declared = p
                        .class(class)
                        .map(|c| c.usage.clone())
                        .ok_or_else(|| stuck(out.config.expr.span, format!("unknown class `{class}`")))?;
                    monitor.track(*fresh, declared);
                }
                monitor.step_label(&out.label)?;
                trace.push(TraceRecord {
                    step: steps,
                    label: out.label.to_string(),
                    rule: out.rule,
                });
                config = out.config;
                steps += 1;
            }
        }
    }
    let completed = monitor.check_completion();
    Ok(RunReport { trace, final_config: config, monitor, completed, steps })
}

/// Heap consistency Γ ⊢ h: same objects and classes, and field bindings that
/// correspond tag-for-value.
pub fn consistent(p: &Program, env: &TypeEnv, heap: &Heap) -> bool {
    if env.len() != heap.len() {
        return false;
    }
    for (o, entry) in env.iter() {
        let Some(cell) = heap.get(o) else { return false };
        if entry.ty.class != cell.class {
            return false;
        }
        if entry.fields.len() != cell.fields.len() {
            return false;
        }
        for (name, z) in &entry.fields {
            let Some(v) = cell.fields.get(name) else { return false };
            let ok = match (z, v) {
                (FieldType::Ref(o2), Value::Obj(o3)) => o2 == o3,
                (FieldType::Bot, Value::Null) => true,
                (FieldType::Bool, Value::Bool(_)) => true,
                (FieldType::Void, Value::Unit) => true,
                (FieldType::Float, Value::Float(_)) => true,
                (FieldType::Enum(l), Value::Enum(_, lab)) => {
                    p.enum_def(l).is_some_and(|d| d.labels.contains(lab))
                }
                _ => false,
            };
            if !ok {
                return false;
            }
        }
    }
    true
}

/// The value type of a run-time value under an environment, used when
/// replaying typing-environment transitions.
pub fn value_type_of(p: &Program, env: &TypeEnv, v: &Value) -> Option<ValueType> {
    Some(match v {
        Value::Obj(o) => ValueType::Obj(env.get(*o)?.ty.clone()),
        Value::Bool(_) => ValueType::Bool,
        Value::Unit => ValueType::Void,
        Value::Null => ValueType::Bot,
        Value::Float(_) => ValueType::Float,
        Value::Enum(_, label) => {
            let enums = p.enums_with_label(label);
            ValueType::Enum(enums.first()?.name.clone())
        }
    })
}
