//! Checker-level tests: the worked aliasing example, lowering behavior,
//! recursion machinery, link handling, and the typing-environment transition
//! checks.

mod common;

use papaya_core::ast::{self, Decl, Expr, ExprKind, ObjRef, Owner, Receiver, TypeAnnot};
use papaya_core::checker::{CheckOptions, CheckResult, Checker, DiagKind, RecEnv, LabelEnv};
use papaya_core::diag::Span;
use papaya_core::parser::parse_usage;
use papaya_core::typeenv::{
    agree, env_equal, env_step_check, get_type, returns, term, vtype, EnvLabel, FieldType,
    FieldTypeEnv, ObjectType, TypeEnv, ValueType,
};
use papaya_core::usage;

fn obj_entry(env: TypeEnv, n: u32, class: &str, usage_text: &str, fields: &[(&str, FieldType)]) -> TypeEnv {
    let usage = parse_usage(usage_text).unwrap();
    let mut map = FieldTypeEnv::new();
    for (k, z) in fields {
        map.insert(k.to_string(), z.clone());
    }
    env.bind(
        ObjRef(n),
        ObjectType { reference: ObjRef(n), class: class.to_string(), usage },
        map,
    )
}

/// The typing environment after the aliases are installed: main's fields
/// point at the three objects and both the manager and the store share the
/// account object.
fn aliased_env() -> TypeEnv {
    let env = TypeEnv::new();
    let env = obj_entry(
        env,
        0,
        "Main",
        "end",
        &[
            ("account", FieldType::Ref(ObjRef(1))),
            ("manager", FieldType::Ref(ObjRef(2))),
            ("db", FieldType::Ref(ObjRef(3))),
        ],
    );
    let env = obj_entry(
        env,
        1,
        "BankAccount",
        "{setMoney; {applyInterest; {getMoney; end}}}",
        &[("amount", FieldType::Float)],
    );
    let env = obj_entry(env, 2, "SalaryManager", "{addSalary; end}", &[("account", FieldType::Ref(ObjRef(1)))]);
    obj_entry(env, 3, "DataStorage", "{store; end}", &[("account", FieldType::Ref(ObjRef(1)))])
}

fn span() -> Span {
    Span::synthetic()
}

fn call_add_salary() -> Expr {
    Expr::new(
        ExprKind::Call(
            Receiver::Field(Owner::Obj(ObjRef(0)), "manager".into()),
            "addSalary".into(),
            Box::new(Expr::new(ExprKind::Float(100.0), span())),
        ),
        span(),
    )
}

/// Checking the salary deposit from the aliased environment updates both the
/// account (through the alias stored in the manager) and the manager itself;
/// the store's binding is untouched.
#[test]
fn add_salary_updates_aliased_bindings() {
    let p = common::load("bankaccount.pap");
    let mut checker = Checker::new(&p);
    let (t, out) = checker.check_runtime_expr(&aliased_env(), &call_add_salary()).unwrap();
    assert_eq!(t, ValueType::Void);

    let acc = out.get(ObjRef(1)).unwrap();
    assert_eq!(acc.ty.usage.to_string(), "{getMoney; end}");
    let man = out.get(ObjRef(2)).unwrap();
    assert_eq!(man.ty.usage.to_string(), "end");
    let db = out.get(ObjRef(3)).unwrap();
    assert_eq!(db.ty.usage.to_string(), "{store; end}");
    assert_eq!(out.get(ObjRef(0)).unwrap().ty.usage.to_string(), "end");
    // Field bindings survive unchanged.
    assert_eq!(acc.fields["amount"], FieldType::Float);
    assert_eq!(man.fields["account"], FieldType::Ref(ObjRef(1)));
}

#[test]
fn add_salary_step_is_derivable_and_store_then_succeeds() {
    let p = common::load("bankaccount.pap");
    let env = aliased_env();
    let label = EnvLabel::Method(ObjRef(2), "addSalary".into());
    let stepped = env.update_usage(ObjRef(2), parse_usage("end").unwrap());
    assert!(env_step_check(&p, &env, &label, &stepped));

    // (trans) changes exactly one binding.
    let two_changed = stepped.update_usage(ObjRef(3), parse_usage("end").unwrap());
    assert!(!env_step_check(&p, &env, &label, &two_changed));

    // (empty) holds reflexively for every environment.
    assert!(env_step_check(&p, &env, &EnvLabel::Eps, &env));
}

#[test]
fn unit_checks_to_void_in_any_env() {
    let p = common::load("unit_main.pap");
    let mut checker = Checker::new(&p);
    let env = TypeEnv::new();
    let r = checker
        .check_expr(&RecEnv::new(), &LabelEnv::new(), &env, &Expr::new(ExprKind::Unit, span()), false)
        .unwrap();
    match r {
        CheckResult::Done(t, out) => {
            assert_eq!(t, ValueType::Void);
            assert!(env_equal(&out, &env));
        }
        CheckResult::Pending => panic!("unit is not pending"),
    }
}

#[test]
fn lowering_matches_surface_conventions() {
    let p = common::load("bankaccount.pap");
    // Omitted return type becomes void.
    let ba = p.class("BankAccount").unwrap();
    assert_eq!(ba.method("applyInterest").unwrap().ret_ty, TypeAnnot::Void);
    // Omitted parameter becomes a void parameter.
    let get = ba.method("getMoney").unwrap();
    assert_eq!(get.param_ty, TypeAnnot::Void);
    assert_eq!(get.ret_ty, TypeAnnot::Float);
    // Bare names in main resolve to fields of the Main object.
    let main_body = &p.main_method().unwrap().body;
    let mut saw_account_assign = false;
    ast::visit_expr(main_body, &mut |e| {
        if let ExprKind::AssignNew(Owner::This, f, c) = &e.kind {
            if f == "account" && c == "BankAccount" {
                saw_account_assign = true;
            }
        }
    });
    assert!(saw_account_assign);
}

#[test]
fn desugared_programs_contain_no_object_references() {
    for (name, p) in common::accepted_corpus() {
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
                assert!(ast::is_source_level(&m.body), "{name}: {}.{}", c.name, m.name);
            }
        }
    }
}

#[test]
fn recursion_expands_each_site_at_most_twice() {
    for name in ["direct_rec.pap", "chain_rec.pap"] {
        let p = common::load(name);
        let report = Checker::new(&p).check_program().unwrap();
        for ((obj, method), count) in &report.expansions {
            assert!(
                *count <= 2,
                "{name}: {obj}.{method} expanded {count} times"
            );
        }
    }
}

#[test]
fn snapshot_deletion_reproduces_the_same_result() {
    for name in ["direct_rec.pap", "chain_rec.pap", "loop_simple.pap", "combo.pap"] {
        let p = common::load(name);
        assert!(
            papaya_core::harness::snapshot_deletion_agrees(&p).unwrap(),
            "{name} changed under snapshot deletion"
        );
    }
}

#[test]
fn forced_reexpansion_bumps_expansion_count() {
    let p = common::load("direct_rec.pap");
    let base = Checker::new(&p).check_program().unwrap();
    let mut alt = Checker::with_options(
        &p,
        CheckOptions { skip_rec_base_cases: 1, ..Default::default() },
    );
    let forced = alt.check_program().unwrap();
    let site = (ObjRef(1), "run".to_string());
    assert_eq!(base.expansions[&site] + 1, forced.expansions[&site]);
    assert!(env_equal(&base.final_env, &forced.final_env));
}

#[test]
fn match_on_stored_enum_needs_a_link() {
    let text = r#"
enum Mode { fast, slow }

class Machine[{setMode; {check_it; end}}] {
  val mode: Mode;
  fun setMode(m: Mode): void {
    this.mode = m;
  }
  fun check_it(): void {
    match (this.mode) {
      fast: unit
      slow: unit
    }
  }
}

main {
  val m: Machine;
  m = new Machine;
  m.setMode(#fast);
  m.check_it();
}
"#;
    let p = papaya_core::compile(text, papaya_core::diag::FileId(0)).unwrap();
    let errs = papaya_core::checker::check_program(&p).expect_err("rejected");
    assert!(errs.iter().any(|d| matches!(d.kind, DiagKind::LinkExpected { .. })));
}

#[test]
fn enum_literals_type_plain_outside_match_scrutinees() {
    let p = common::load("enum_field.pap");
    let report = papaya_core::checker::check_program(&p).unwrap();
    // The stored enum keeps its base tag in the final environment.
    let machine = report.final_env.get(ObjRef(1)).unwrap();
    assert_eq!(machine.fields["mode"], FieldType::Enum("Mode".into()));
    let rules: Vec<&str> = report.trace.iter().map(|t| t.rule).collect();
    assert!(rules.contains(&"Const"));
}

#[test]
fn agree_implies_returns_over_small_universe() {
    let annots = [
        TypeAnnot::Class("C".into()),
        TypeAnnot::Class("D".into()),
        TypeAnnot::Bool,
        TypeAnnot::Void,
        TypeAnnot::Float,
        TypeAnnot::Enum("L".into()),
        TypeAnnot::Enum("M".into()),
    ];
    let obj = |c: &str| {
        ValueType::Obj(ObjectType {
            reference: ObjRef(1),
            class: c.to_string(),
            usage: parse_usage("end").unwrap(),
        })
    };
    let values = [
        ValueType::Bot,
        obj("C"),
        obj("D"),
        ValueType::Bool,
        ValueType::Void,
        ValueType::Float,
        ValueType::Enum("L".into()),
        ValueType::Enum("M".into()),
        ValueType::Link("L".into(), ObjRef(1)),
        ValueType::Link("M".into(), ObjRef(2)),
    ];
    for t in &annots {
        for v in &values {
            if agree(t, v) {
                assert!(returns(t, v), "agree({t}, {v}) but not returns");
            }
        }
    }
}

#[test]
fn env_equal_is_an_equivalence_on_corpus_final_envs() {
    let mut envs = Vec::new();
    for (_, p) in common::accepted_corpus() {
        let report = papaya_core::checker::check_program(&p).unwrap();
        // A variant with every recursive usage unfolded once.
        let mut unfolded = report.final_env.clone();
        for (o, entry) in report.final_env.iter() {
            unfolded = unfolded.update_usage(o, usage::unfold(&entry.ty.usage).unwrap());
        }
        envs.push(report.final_env);
        envs.push(unfolded);
    }
    for a in &envs {
        assert!(env_equal(a, a));
    }
    for a in &envs {
        for b in &envs {
            assert_eq!(env_equal(a, b), env_equal(b, a));
        }
    }
    for a in &envs {
        for b in &envs {
            for c in &envs {
                if env_equal(a, b) && env_equal(b, c) {
                    assert!(env_equal(a, c));
                }
            }
        }
    }
}

#[test]
fn vtype_inverts_get_type_on_reachable_tags() {
    for (name, p) in common::accepted_corpus() {
        let report = papaya_core::checker::check_program(&p).unwrap();
        let env = &report.final_env;
        for (_, entry) in env.iter() {
            for z in entry.fields.values() {
                let t = get_type(z, env).unwrap();
                assert_eq!(&vtype(&t).unwrap(), z, "{name}");
            }
        }
        assert!(term(env), "{name}");
    }
}

#[test]
fn wf_clauses_survive_one_unfolding() {
    for (name, p) in common::accepted_corpus() {
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
                ast::visit_expr(&m.body, &mut |e| {
                    if let ExprKind::Label(k, body) = &e.kind {
                        let unfolded = ast::subst_continue(body, k, e);
                        let diags = papaya_core::wf::well_formed_expr(&unfolded);
                        for d in diags {
                            assert_eq!(
                                d.rule, "ContinueFollowed",
                                "{name}: clause 2-4 violation after unfolding: {}",
                                d.message
                            );
                        }
                    }
                });
            }
        }
    }
}

#[test]
fn explain_names_rule_object_and_usage() {
    let p = common::load("bankaccount_swapped.pap");
    let errs = papaya_core::checker::check_program(&p).expect_err("rejected");
    let text = papaya_core::checker::explain(&errs[0]);
    assert!(text.contains("getMoney"));
    assert!(text.contains("setMoney"));
    assert!(text.contains("o1"));
    let json = errs[0].to_diagnostic().to_json("bankaccount_swapped.pap");
    assert_eq!(json["rule"], "MethodNotAvailable");
    assert_eq!(json["object"], "o1");
}
