//! Typing environments: the checker's abstract heap.
//!
//! A typing environment maps object references to an object type and a field
//! typing environment. Environments are immutable values; every update
//! produces a new environment, so the checker can snapshot them into the
//! recursion and label environments and compare against history later.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::ast::{FieldDecl, ObjRef, Program, TypeAnnot, Usage};
use crate::usage::{self, UsageAction};

/// A field type tag `z`: a base-type marker or a reference to another object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldType {
    Bool,
    Void,
    /// The null-type tag: the initial tag of every class-typed field.
    Bot,
    Float,
    Enum(String),
    Ref(ObjRef),
}

impl fmt::Display for FieldType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldType::Bool => write!(f, "bool"),
            FieldType::Void => write!(f, "void"),
            FieldType::Bot => write!(f, "⊥"),
            FieldType::Float => write!(f, "float"),
            FieldType::Enum(l) => write!(f, "{l}"),
            FieldType::Ref(o) => write!(f, "{o}"),
        }
    }
}

/// Field typing environment λ: one binding per field name.
pub type FieldTypeEnv = BTreeMap<String, FieldType>;

/// An object type `o[C, U]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectType {
    pub reference: ObjRef,
    pub class: String,
    pub usage: Usage,
}

impl fmt::Display for ObjectType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}, {}]", self.reference, self.class, self.usage)
    }
}

/// A value type `T`.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueType {
    Obj(ObjectType),
    Void,
    Bool,
    Float,
    /// ⊥, the type of `null`.
    Bot,
    Enum(String),
    /// `L link o`: an enum value tethered to the object whose choice usage
    /// the label resolves. Never stored in fields or passed as an argument.
    Link(String, ObjRef),
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueType::Obj(o) => write!(f, "{o}"),
            ValueType::Void => write!(f, "void"),
            ValueType::Bool => write!(f, "bool"),
            ValueType::Float => write!(f, "float"),
            ValueType::Bot => write!(f, "⊥"),
            ValueType::Enum(l) => write!(f, "{l}"),
            ValueType::Link(l, o) => write!(f, "{l} link {o}"),
        }
    }
}

/// One object's binding in a typing environment.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjEntry {
    pub ty: ObjectType,
    pub fields: FieldTypeEnv,
}

/// The typing environment Γ.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TypeEnv {
    map: BTreeMap<ObjRef, ObjEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("dangling reference {0} in typing environment")]
    DanglingReference(ObjRef),
    #[error("link type {0} link {1} cannot be stored in a field")]
    LinkNotStorable(String, ObjRef),
}

impl TypeEnv {
    pub fn new() -> Self {
        TypeEnv::default()
    }

    pub fn get(&self, o: ObjRef) -> Option<&ObjEntry> {
        self.map.get(&o)
    }

    pub fn contains(&self, o: ObjRef) -> bool {
        self.map.contains_key(&o)
    }

    pub fn domain(&self) -> impl Iterator<Item = ObjRef> + '_ {
        self.map.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ObjRef, &ObjEntry)> {
        self.map.iter().map(|(o, e)| (*o, e))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Extends the environment with a fresh binding. The reference must not
    /// already be bound: environments hold a single binding per object.
    pub fn bind(&self, o: ObjRef, ty: ObjectType, fields: FieldTypeEnv) -> TypeEnv {
        debug_assert!(!self.map.contains_key(&o));
        debug_assert_eq!(ty.reference, o);
        let mut map = self.map.clone();
        map.insert(o, ObjEntry { ty, fields });
        TypeEnv { map }
    }

    /// `Γ[o.usage ↦ U]`
    pub fn update_usage(&self, o: ObjRef, u: Usage) -> TypeEnv {
        let mut map = self.map.clone();
        if let Some(e) = map.get_mut(&o) {
            e.ty.usage = u;
        }
        TypeEnv { map }
    }

    /// `Γ[o.f ↦ z]`
    pub fn update_field(&self, o: ObjRef, field: &str, z: FieldType) -> TypeEnv {
        let mut map = self.map.clone();
        if let Some(e) = map.get_mut(&o) {
            e.fields.insert(field.to_string(), z);
        }
        TypeEnv { map }
    }

    pub fn max_ref(&self) -> Option<ObjRef> {
        self.map.keys().max().copied()
    }
}

/// Renders one binding per line: `o0 ↦ (Main[end], {account ↦ o1})`.
impl fmt::Display for TypeEnv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (o, e)) in self.map.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{} ↦ ({}[{}], {{", o, e.ty.class, e.ty.usage)?;
            for (j, (name, z)) in e.fields.iter().enumerate() {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{name} ↦ {z}")?;
            }
            write!(f, "}})")?;
        }
        Ok(())
    }
}

/// The labels of the typing-environment transition system.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnvLabel {
    Eps,
    Method(ObjRef, String),
    Choice(ObjRef, String),
}

impl EnvLabel {
    pub fn action(&self) -> Option<(ObjRef, UsageAction)> {
        match self {
            EnvLabel::Eps => None,
            EnvLabel::Method(o, m) => Some((*o, UsageAction::Method(m.clone()))),
            EnvLabel::Choice(o, l) => Some((*o, UsageAction::Label(l.clone()))),
        }
    }
}

impl fmt::Display for EnvLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvLabel::Eps => write!(f, "eps"),
            EnvLabel::Method(o, m) => write!(f, "{o}.{m}"),
            EnvLabel::Choice(o, l) => write!(f, "{o}#{l}"),
        }
    }
}

// ── Auxiliary functions ─────────────────────────────────────────────

/// The initial field typing environment of a freshly allocated object:
/// class-typed fields start at ⊥, base-typed fields keep their base tag.
pub fn init_types(fields: &[FieldDecl]) -> FieldTypeEnv {
    fields
        .iter()
        .map(|f| {
            let z = match &f.ty {
                TypeAnnot::Class(_) => FieldType::Bot,
                TypeAnnot::Enum(l) => FieldType::Enum(l.clone()),
                TypeAnnot::Void => FieldType::Void,
                TypeAnnot::Bool => FieldType::Bool,
                TypeAnnot::Float => FieldType::Float,
            };
            (f.name.clone(), z)
        })
        .collect()
}

/// Whether a value of type `T` matches the declared type `t`. Null can be
/// written to class-typed fields, and objects match their class no matter the
/// current protocol state.
pub fn agree(t: &TypeAnnot, v: &ValueType) -> bool {
    match (t, v) {
        (TypeAnnot::Class(_), ValueType::Bot) => true,
        (TypeAnnot::Class(c), ValueType::Obj(o)) => *c == o.class,
        (TypeAnnot::Bool, ValueType::Bool) => true,
        (TypeAnnot::Void, ValueType::Void) => true,
        (TypeAnnot::Enum(l), ValueType::Enum(l2)) => l == l2,
        (TypeAnnot::Float, ValueType::Float) => true,
        _ => false,
    }
}

/// Extends [`agree`] with the option to return a link type from a method.
pub fn returns(t: &TypeAnnot, v: &ValueType) -> bool {
    agree(t, v) || matches!((t, v), (TypeAnnot::Enum(l), ValueType::Link(l2, _)) if l == l2)
}

/// Unpacks a field tag into a value type, resolving references through the
/// environment.
pub fn get_type(z: &FieldType, env: &TypeEnv) -> Result<ValueType, EnvError> {
    Ok(match z {
        FieldType::Ref(o) => {
            let entry = env.get(*o).ok_or(EnvError::DanglingReference(*o))?;
            ValueType::Obj(entry.ty.clone())
        }
        FieldType::Bool => ValueType::Bool,
        FieldType::Void => ValueType::Void,
        FieldType::Bot => ValueType::Bot,
        FieldType::Float => ValueType::Float,
        FieldType::Enum(l) => ValueType::Enum(l.clone()),
    })
}

/// Tags a value type for storage in a field. Link types are never storable.
pub fn vtype(v: &ValueType) -> Result<FieldType, EnvError> {
    Ok(match v {
        ValueType::Obj(o) => FieldType::Ref(o.reference),
        ValueType::Bool => FieldType::Bool,
        ValueType::Void => FieldType::Void,
        ValueType::Bot => FieldType::Bot,
        ValueType::Float => FieldType::Float,
        ValueType::Enum(l) => FieldType::Enum(l.clone()),
        ValueType::Link(l, o) => return Err(EnvError::LinkNotStorable(l.clone(), *o)),
    })
}

/// True iff every object's protocol is finished.
pub fn term(env: &TypeEnv) -> bool {
    env.iter().all(|(_, e)| usage::terminated(&e.ty.usage).unwrap_or(false))
}

/// Environment equality: same domains; per object the same class, bisimilar
/// usages, and identical field maps (references by identity, base tags by
/// equality).
pub fn env_equal(a: &TypeEnv, b: &TypeEnv) -> bool {
    if a.len() != b.len() {
        return false;
    }
    for (o, ea) in a.iter() {
        let Some(eb) = b.get(o) else { return false };
        if ea.ty.class != eb.ty.class || ea.fields != eb.fields {
            return false;
        }
        if !usage::bisimilar(&ea.ty.usage, &eb.ty.usage).unwrap_or(false) {
            return false;
        }
    }
    true
}

/// A human-readable description of the first difference between two
/// environments, for diagnostics.
pub fn env_diff(a: &TypeEnv, b: &TypeEnv) -> Option<String> {
    for (o, ea) in a.iter() {
        let Some(eb) = b.get(o) else {
            return Some(format!("{o} is missing from one environment"));
        };
        if ea.ty.class != eb.ty.class {
            return Some(format!("{o} has class {} vs {}", ea.ty.class, eb.ty.class));
        }
        if !usage::bisimilar(&ea.ty.usage, &eb.ty.usage).unwrap_or(false) {
            return Some(format!("{o} is in state {} vs {}", ea.ty.usage, eb.ty.usage));
        }
        if ea.fields != eb.fields {
            return Some(format!("{o} has differing field bindings"));
        }
    }
    for (o, _) in b.iter() {
        if a.get(o).is_none() {
            return Some(format!("{o} is missing from one environment"));
        }
    }
    None
}

/// Verifies that `g1 → g2` under `label` is derivable by exactly one rule of
/// the typing-environment transition system: (empty) identity under ε,
/// (trans) one usage step, (update) one field retag under ε, or (new) one
/// fresh object installed and one field repointed under ε.
pub fn env_step_check(p: &Program, g1: &TypeEnv, label: &EnvLabel, g2: &TypeEnv) -> bool {
    match label {
        EnvLabel::Eps => {
            env_equal(g1, g2) || check_update(g1, g2) || check_new(p, g1, g2)
        }
        _ => check_trans(g1, label, g2),
    }
}

/// (trans): exactly one object's usage steps on the action; everything else
/// is unchanged.
fn check_trans(g1: &TypeEnv, label: &EnvLabel, g2: &TypeEnv) -> bool {
    let Some((obj, action)) = label.action() else { return false };
    if g1.len() != g2.len() {
        return false;
    }
    for (o, e1) in g1.iter() {
        let Some(e2) = g2.get(o) else { return false };
        if e1.ty.class != e2.ty.class || e1.fields != e2.fields {
            return false;
        }
        if o == obj {
            let stepped = match usage::usage_step(&e1.ty.usage, &action) {
                Ok(Some(u)) => u,
                _ => return false,
            };
            if !usage::bisimilar(&stepped, &e2.ty.usage).unwrap_or(false) {
                return false;
            }
        } else if !usage::bisimilar(&e1.ty.usage, &e2.ty.usage).unwrap_or(false) {
            return false;
        }
    }
    true
}

/// (update): exactly one existing field binding is retagged.
fn check_update(g1: &TypeEnv, g2: &TypeEnv) -> bool {
    if g1.len() != g2.len() {
        return false;
    }
    let mut changed = 0usize;
    for (o, e1) in g1.iter() {
        let Some(e2) = g2.get(o) else { return false };
        if e1.ty.class != e2.ty.class
            || !usage::bisimilar(&e1.ty.usage, &e2.ty.usage).unwrap_or(false)
        {
            return false;
        }
        if e1.fields.len() != e2.fields.len() {
            return false;
        }
        for (name, z1) in &e1.fields {
            match e2.fields.get(name) {
                Some(z2) if z1 == z2 => {}
                Some(_) => changed += 1,
                None => return false,
            }
        }
    }
    changed == 1
}

/// (new): one fresh object bound to its class's declared usage and initial
/// field tags, and one existing field repointed to it.
fn check_new(p: &Program, g1: &TypeEnv, g2: &TypeEnv) -> bool {
    if g2.len() != g1.len() + 1 {
        return false;
    }
    let Some(fresh) = g2.domain().find(|o| !g1.contains(*o)) else { return false };
    let entry = g2.get(fresh).unwrap();
    let Some(class) = p.class(&entry.ty.class) else { return false };
    if !usage::bisimilar(&entry.ty.usage, &class.usage).unwrap_or(false) {
        return false;
    }
    if entry.fields != init_types(&class.fields) {
        return false;
    }
    let mut repointed = 0usize;
    for (o, e1) in g1.iter() {
        let Some(e2) = g2.get(o) else { return false };
        if e1.ty.class != e2.ty.class
            || !usage::bisimilar(&e1.ty.usage, &e2.ty.usage).unwrap_or(false)
        {
            return false;
        }
        for (name, z1) in &e1.fields {
            match e2.fields.get(name) {
                Some(z2) if z1 == z2 => {}
                Some(FieldType::Ref(r)) if *r == fresh => repointed += 1,
                _ => return false,
            }
        }
    }
    repointed == 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diag::Span;

    fn field(name: &str, ty: TypeAnnot) -> FieldDecl {
        FieldDecl { name: name.to_string(), ty, span: Span::synthetic() }
    }

    fn obj(n: u32, class: &str, usage: Usage) -> ObjectType {
        ObjectType { reference: ObjRef(n), class: class.to_string(), usage }
    }

    fn branch(arms: &[(&str, Usage)]) -> Usage {
        Usage::Branch(arms.iter().map(|(m, w)| (m.to_string(), w.clone())).collect())
    }

    #[test]
    fn init_types_tags() {
        let fs = [
            field("account", TypeAnnot::Class("BankAccount".into())),
            field("amount", TypeAnnot::Float),
            field("ok", TypeAnnot::Bool),
            field("mode", TypeAnnot::Enum("Mode".into())),
        ];
        let env = init_types(&fs);
        assert_eq!(env["account"], FieldType::Bot);
        assert_eq!(env["amount"], FieldType::Float);
        assert_eq!(env["ok"], FieldType::Bool);
        assert_eq!(env["mode"], FieldType::Enum("Mode".into()));
        assert!(init_types(&[]).is_empty());
    }

    #[test]
    fn agree_clauses() {
        let ba = TypeAnnot::Class("BankAccount".into());
        assert!(agree(&ba, &ValueType::Bot));
        assert!(agree(&ba, &ValueType::Obj(obj(1, "BankAccount", Usage::End))));
        assert!(!agree(&ba, &ValueType::Obj(obj(1, "DataStorage", Usage::End))));
        assert!(agree(&TypeAnnot::Bool, &ValueType::Bool));
        assert!(agree(&TypeAnnot::Void, &ValueType::Void));
        assert!(agree(&TypeAnnot::Float, &ValueType::Float));
        assert!(agree(&TypeAnnot::Enum("L".into()), &ValueType::Enum("L".into())));
        assert!(!agree(&TypeAnnot::Enum("L".into()), &ValueType::Link("L".into(), ObjRef(1))));
    }

    #[test]
    fn returns_extends_agree() {
        let l = TypeAnnot::Enum("L".into());
        assert!(returns(&l, &ValueType::Link("L".into(), ObjRef(2))));
        assert!(returns(&TypeAnnot::Bool, &ValueType::Bool));
        assert!(!returns(&l, &ValueType::Bool));
        assert!(!returns(&l, &ValueType::Link("M".into(), ObjRef(2))));
    }

    #[test]
    fn get_type_and_vtype() {
        let env = TypeEnv::new().bind(
            ObjRef(1),
            obj(1, "BankAccount", branch(&[("getMoney", Usage::End)])),
            FieldTypeEnv::new(),
        );
        let t = get_type(&FieldType::Ref(ObjRef(1)), &env).unwrap();
        assert_eq!(t, ValueType::Obj(obj(1, "BankAccount", branch(&[("getMoney", Usage::End)]))));
        assert_eq!(get_type(&FieldType::Bool, &env).unwrap(), ValueType::Bool);
        assert_eq!(get_type(&FieldType::Bot, &env).unwrap(), ValueType::Bot);
        assert_eq!(
            get_type(&FieldType::Ref(ObjRef(9)), &env),
            Err(EnvError::DanglingReference(ObjRef(9)))
        );

        assert_eq!(vtype(&t).unwrap(), FieldType::Ref(ObjRef(1)));
        assert_eq!(vtype(&ValueType::Void).unwrap(), FieldType::Void);
        assert_eq!(
            vtype(&ValueType::Link("L".into(), ObjRef(1))),
            Err(EnvError::LinkNotStorable("L".into(), ObjRef(1)))
        );
    }

    #[test]
    fn vtype_inverts_get_type() {
        let env = TypeEnv::new().bind(ObjRef(3), obj(3, "C", Usage::End), FieldTypeEnv::new());
        for z in [
            FieldType::Bool,
            FieldType::Void,
            FieldType::Bot,
            FieldType::Float,
            FieldType::Enum("L".into()),
            FieldType::Ref(ObjRef(3)),
        ] {
            assert_eq!(vtype(&get_type(&z, &env).unwrap()).unwrap(), z);
        }
    }

    #[test]
    fn term_examples() {
        assert!(term(&TypeEnv::new()));
        let done = TypeEnv::new().bind(ObjRef(0), obj(0, "C", Usage::End), FieldTypeEnv::new());
        assert!(term(&done));
        let open = TypeEnv::new().bind(
            ObjRef(0),
            obj(0, "C", branch(&[("m", Usage::End)])),
            FieldTypeEnv::new(),
        );
        assert!(!term(&open));
    }

    #[test]
    fn env_equal_up_to_unfolding() {
        let r = Usage::Rec("X".into(), Box::new(branch(&[("m", Usage::Var("X".into()))])));
        let g1 = TypeEnv::new().bind(ObjRef(0), obj(0, "C", r.clone()), FieldTypeEnv::new());
        let g2 = TypeEnv::new().bind(
            ObjRef(0),
            obj(0, "C", crate::usage::unfold(&r).unwrap()),
            FieldTypeEnv::new(),
        );
        assert!(env_equal(&g1, &g1));
        assert!(env_equal(&g1, &g2));

        let g3 = g1.update_field(ObjRef(0), "f", FieldType::Bot);
        assert!(!env_equal(&g1, &g3));
    }
}
