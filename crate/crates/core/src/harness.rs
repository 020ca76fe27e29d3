//! Executable metatheory: subject reduction, progress, conformance, and
//! completion as checkable properties of concrete runs.
//!
//! The subject-reduction harness replays each run-time step as a transition
//! on typing environments and validates it three ways: the transition must be
//! derivable in the typing-environment transition system, the replayed
//! environment must stay consistent with the heap, and the residual
//! expression must re-check to the same type and final environment.

use thiserror::Error;

use crate::ast::Program;
use crate::checker::{self, Checker, TypeDiagnostic};
use crate::interp::{self, Interp, StepEffect};
use crate::typeenv::{
    env_equal, env_step_check, init_types, vtype, EnvLabel, FieldType, ObjectType, TypeEnv,
    ValueType,
};
use crate::usage::{self, UsageAction};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("program is ill-typed: {0}")]
    IllTyped(String),
    #[error("run failed at step {step}: {error}")]
    Runtime { step: u64, error: interp::RuntimeError },
    #[error("step {step} ({label}): not derivable in the environment transition system")]
    EnvStepRejected { step: u64, label: String },
    #[error("step {step}: heap inconsistent with replayed environment")]
    Inconsistent { step: u64 },
    #[error("step {step}: residual expression no longer checks: {diag}")]
    RecheckFailed { step: u64, diag: Box<TypeDiagnostic> },
    #[error("step {step}: residual expression checks to a different {what}")]
    RecheckMismatch { step: u64, what: &'static str },
    #[error("replay cannot type value at step {step}")]
    ReplayValue { step: u64 },
    #[error("terminal configuration leaves unfinished protocols")]
    Incomplete,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HarnessReport {
    pub steps: u64,
    pub rechecks: u64,
}

/// Replays one run-time step as a typing-environment transition, mirroring
/// the construction in the subject-reduction argument: labelled steps
/// transition the labelled object's usage, assignments retag one field, and
/// allocations install the fresh object and repoint one field.
pub fn replay_env_step(
    p: &Program,
    env: &TypeEnv,
    label: &EnvLabel,
    effect: &StepEffect,
) -> Option<TypeEnv> {
    match effect {
        StepEffect::Alloc { object, field, fresh, class } => {
            let decl = p.class(class)?;
            let env1 = env.bind(
                *fresh,
                ObjectType { reference: *fresh, class: class.clone(), usage: decl.usage.clone() },
                init_types(&decl.fields),
            );
            Some(env1.update_field(*object, field, FieldType::Ref(*fresh)))
        }
        StepEffect::Assign { object, field, value } => {
            let t = interp::value_type_of(p, env, value)?;
            let z = vtype(&t).ok()?;
            Some(env.update_field(*object, field, z))
        }
        StepEffect::None => match label.action() {
            None => Some(env.clone()),
            Some((obj, action)) => {
                let entry = env.get(obj)?;
                let next = usage::usage_step(&entry.ty.usage, &action).ok()??;
                Some(env.update_usage(obj, next))
            }
        },
    }
}

/// Runs a well-typed program to completion, validating subject reduction,
/// consistency, conformance, and completion at every step. `recheck_every`
/// controls how often the residual expression is re-checked (1 = every step).
pub fn subject_reduction(
    p: &Program,
    fuel: u64,
    recheck_every: u64,
) -> Result<HarnessReport, HarnessError> {
    let report = checker::check_program(p)
        .map_err(|ds| HarnessError::IllTyped(ds.first().map(|d| d.to_string()).unwrap_or_default()))?;
    let expected_final = report.final_env;
    let expected_ty = report.result;

    let mut interp = Interp::new(p);
    let (mut config, mut monitor) =
        interp.initial().map_err(|error| HarnessError::Runtime { step: 0, error })?;
    let mut env = {
        let mut c = Checker::new(p);
        c.initial_env().1
    };
    if !interp::consistent(p, &env, &config.heap) {
        return Err(HarnessError::Inconsistent { step: 0 });
    }

    let mut out = HarnessReport::default();
    let mut step: u64 = 0;
    loop {
        if step >= fuel {
            return Err(HarnessError::Runtime {
                step,
                error: interp::RuntimeError::FuelExhausted { steps: step },
            });
        }
        let next = interp
            .step(&config)
            .map_err(|error| HarnessError::Runtime { step, error })?;
        let Some(stepped) = next else { break };

        // Conformance: every emitted label must be a legal usage transition.
        if let StepEffect::Alloc { fresh, class, .. } = &stepped.effect {
            let declared = p.class(class).expect("allocated class is declared").usage.clone();
            monitor.track(*fresh, declared);
        }
        monitor
            .step_label(&stepped.label)
            .map_err(|v| HarnessError::Runtime { step, error: v.into() })?;

        // Subject reduction: the step is matched by one derivable transition
        // on typing environments, preserving heap consistency.
        let env2 = replay_env_step(p, &env, &stepped.label, &stepped.effect)
            .ok_or(HarnessError::ReplayValue { step })?;
        if !env_step_check(p, &env, &stepped.label, &env2) {
            return Err(HarnessError::EnvStepRejected {
                step,
                label: stepped.label.to_string(),
            });
        }
        if !interp::consistent(p, &env2, &stepped.config.heap) {
            return Err(HarnessError::Inconsistent { step });
        }

        env = env2;
        config = stepped.config;
        step += 1;

        let at_value = interp::is_value(&config.expr);
        if recheck_every > 0 && (step.is_multiple_of(recheck_every) || at_value) {
            let mut rechecker = Checker::new(p);
            let (t, final_env) = rechecker
                .check_runtime_expr(&env, &config.expr)
                .map_err(|diag| HarnessError::RecheckFailed { step, diag: Box::new(diag) })?;
            if !checker::types_join(&t, &expected_ty) && !value_subsumes(&t, &expected_ty) {
                return Err(HarnessError::RecheckMismatch { step, what: "type" });
            }
            if !env_equal(&final_env, &expected_final) {
                return Err(HarnessError::RecheckMismatch { step, what: "final environment" });
            }
            out.rechecks += 1;
        }
    }

    if !monitor.check_completion() {
        return Err(HarnessError::Incomplete);
    }
    out.steps = step;
    Ok(out)
}

/// A residual value may carry a more precise type than the main body's
/// declared judgment (a plain enum for a linked one, ⊥ for a class).
fn value_subsumes(t: &ValueType, expected: &ValueType) -> bool {
    matches!(
        (t, expected),
        (ValueType::Enum(a), ValueType::Link(b, _)) if a == b
    )
}

/// Progress at desk scale: a well-typed program runs to a value within fuel,
/// with no stuck configuration and no null dereference.
pub fn progress(p: &Program, fuel: u64) -> Result<interp::RunReport, HarnessError> {
    checker::check_program(p)
        .map_err(|ds| HarnessError::IllTyped(ds.first().map(|d| d.to_string()).unwrap_or_default()))?;
    interp::run(p, fuel).map_err(|error| HarnessError::Runtime { step: 0, error })
}

/// Re-checks a program with the first recursive base case skipped, forcing
/// one extra expansion, and confirms the result is unchanged. This is the
/// executable form of the snapshot-removal property of the recursion
/// environment.
pub fn snapshot_deletion_agrees(p: &Program) -> Result<bool, String> {
    let base = checker::check_program(p).map_err(|_| "program is ill-typed".to_string())?;
    let mut alt = Checker::with_options(
        p,
        checker::CheckOptions { skip_rec_base_cases: 1, ..Default::default() },
    );
    let alt_report = alt.check_program().map_err(|ds| {
        format!(
            "re-expansion after snapshot deletion failed: {}",
            ds.first().map(|d| d.to_string()).unwrap_or_default()
        )
    })?;
    Ok(checker::types_join(&base.result, &alt_report.result)
        && env_equal(&base.final_env, &alt_report.final_env))
}

/// The first monitor violation of an unchecked run, if any. Used to compare
/// dynamic failures against static diagnostics on ill-typed programs.
pub fn first_violation(p: &Program, fuel: u64) -> Option<(crate::ast::ObjRef, UsageAction)> {
    match interp::run(p, fuel) {
        Err(interp::RuntimeError::Monitor(v)) => Some((v.object, v.action)),
        _ => None,
    }
}
