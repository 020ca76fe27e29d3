//! The labelled transition system over usages: stepping, available actions,
//! unfolding, strong bisimilarity, and termination.
//!
//! A usage denotes a finite-state LTS. Recursive usages step through their
//! one-level unfolding, so the successors of a closed usage are always closed.
//! Equality of usages in typing environments is strong bisimilarity rather
//! than syntactic equality, because unfolding inside loops and recursive
//! calls shifts usages syntactically while preserving their transitions.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::ast::Usage;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UsageAction {
    /// A method call `m`.
    Method(String),
    /// An enum label selection `l`.
    Label(String),
}

impl fmt::Display for UsageAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UsageAction::Method(m) => write!(f, "{m}"),
            UsageAction::Label(l) => write!(f, "#{l}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UsageError {
    #[error("usage has a free variable `{0}`")]
    Open(String),
    #[error("usage recurses without offering an action")]
    NonContractive,
}

/// Free usage variables, in first-occurrence order.
pub fn free_vars(u: &Usage) -> Vec<String> {
    fn walk(u: &Usage, bound: &mut Vec<String>, out: &mut Vec<String>) {
        match u {
            Usage::Var(x) => {
                if !bound.iter().any(|b| b == x) && !out.iter().any(|o| o == x) {
                    out.push(x.clone());
                }
            }
            Usage::Rec(x, body) => {
                bound.push(x.clone());
                walk(body, bound, out);
                bound.pop();
            }
            Usage::Branch(arms) | Usage::Choice(arms) => {
                for (_, w) in arms {
                    walk(w, bound, out);
                }
            }
            Usage::End => {}
        }
    }
    let mut out = Vec::new();
    walk(u, &mut Vec::new(), &mut out);
    out
}

pub fn is_closed(u: &Usage) -> bool {
    free_vars(u).is_empty()
}

/// True when every `rec` body offers an action before hitting a variable,
/// i.e. no chain of binders sits directly over a bare variable.
pub fn is_contractive(u: &Usage) -> bool {
    match u {
        Usage::Rec(_, body) => {
            let mut b: &Usage = body;
            while let Usage::Rec(_, inner) = b {
                b = inner;
            }
            !matches!(b, Usage::Var(_)) && is_contractive(body)
        }
        Usage::Branch(arms) | Usage::Choice(arms) => arms.iter().all(|(_, w)| is_contractive(w)),
        Usage::Var(_) | Usage::End => true,
    }
}

/// Capture-avoiding substitution of `Var(var)` by `repl`.
fn subst(u: &Usage, var: &str, repl: &Usage) -> Usage {
    match u {
        Usage::Var(x) if x == var => repl.clone(),
        Usage::Var(_) | Usage::End => u.clone(),
        Usage::Rec(x, _) if x == var => u.clone(),
        Usage::Rec(x, body) => {
            if free_vars(repl).iter().any(|v| v == x) {
                // Rename the binder away from the replacement's free variables.
                let fresh = fresh_var(x, u, repl);
                let renamed = subst(body, x, &Usage::Var(fresh.clone()));
                Usage::Rec(fresh, Box::new(subst(&renamed, var, repl)))
            } else {
                Usage::Rec(x.clone(), Box::new(subst(body, var, repl)))
            }
        }
        Usage::Branch(arms) => Usage::Branch(
            arms.iter().map(|(m, w)| (m.clone(), subst(w, var, repl))).collect(),
        ),
        Usage::Choice(arms) => Usage::Choice(
            arms.iter().map(|(l, w)| (l.clone(), subst(w, var, repl))).collect(),
        ),
    }
}

fn fresh_var(base: &str, a: &Usage, b: &Usage) -> String {
    let taken: BTreeSet<String> = free_vars(a).into_iter().chain(free_vars(b)).collect();
    let mut i = 1;
    loop {
        let cand = format!("{base}{i}");
        if !taken.contains(&cand) {
            return cand;
        }
        i += 1;
    }
}

/// One-level unfolding: `rec X. U` becomes `U[X := rec X. U]`; anything else
/// is returned unchanged.
pub fn unfold(u: &Usage) -> Result<Usage, UsageError> {
    match u {
        Usage::Rec(x, body) => {
            if matches!(**body, Usage::Var(ref y) if y == x) {
                return Err(UsageError::NonContractive);
            }
            Ok(subst(body, x, u))
        }
        _ => Ok(u.clone()),
    }
}

/// Unfolds until the head constructor is not a binder. Terminates on every
/// contractive usage; detects non-contractive cycles.
fn unfold_head(u: &Usage) -> Result<Usage, UsageError> {
    let mut cur = u.clone();
    let mut seen: HashSet<Usage> = HashSet::new();
    loop {
        match cur {
            Usage::Rec(..) => {
                if !seen.insert(cur.clone()) {
                    return Err(UsageError::NonContractive);
                }
                cur = unfold(&cur)?;
            }
            Usage::Var(x) => return Err(UsageError::Open(x)),
            _ => return Ok(cur),
        }
    }
}

fn require_closed(u: &Usage) -> Result<(), UsageError> {
    match free_vars(u).into_iter().next() {
        Some(x) => Err(UsageError::Open(x)),
        None => Ok(()),
    }
}

/// One transition of the usage LTS. Branches step on member methods, choices
/// on member labels, recursive usages through their unfolding; `end` has no
/// transitions.
pub fn usage_step(u: &Usage, a: &UsageAction) -> Result<Option<Usage>, UsageError> {
    require_closed(u)?;
    let head = unfold_head(u)?;
    Ok(match (&head, a) {
        (Usage::Branch(arms), UsageAction::Method(m)) => {
            arms.iter().find(|(n, _)| n == m).map(|(_, w)| w.clone())
        }
        (Usage::Choice(arms), UsageAction::Label(l)) => {
            arms.iter().find(|(n, _)| n == l).map(|(_, w)| w.clone())
        }
        _ => None,
    })
}

/// The set of actions with a transition, read off the head constructor after
/// unfolding.
pub fn available(u: &Usage) -> Result<BTreeSet<UsageAction>, UsageError> {
    require_closed(u)?;
    let head = unfold_head(u)?;
    Ok(match &head {
        Usage::Branch(arms) => {
            arms.iter().map(|(m, _)| UsageAction::Method(m.clone())).collect()
        }
        Usage::Choice(arms) => arms.iter().map(|(l, _)| UsageAction::Label(l.clone())).collect(),
        _ => BTreeSet::new(),
    })
}

/// True iff the usage has no transitions after full unfolding. This is the
/// semantic reading of a finished protocol: `rec X. end` counts as finished.
pub fn terminated(u: &Usage) -> Result<bool, UsageError> {
    Ok(available(u)?.is_empty())
}

/// All usages reachable from `u` through the LTS. Finite for every closed
/// usage: reachable states are subterms of unfoldings of `u`.
fn reachable(u: &Usage) -> Result<Vec<Usage>, UsageError> {
    let mut seen: HashSet<Usage> = HashSet::new();
    let mut order = Vec::new();
    let mut work = vec![u.clone()];
    while let Some(s) = work.pop() {
        if !seen.insert(s.clone()) {
            continue;
        }
        order.push(s.clone());
        for a in available(&s)? {
            if let Some(next) = usage_step(&s, &a)? {
                if !seen.contains(&next) {
                    work.push(next);
                }
            }
        }
    }
    Ok(order)
}

/// Strong bisimilarity of two closed usages, by partition refinement over the
/// union of their reachable state sets. The usage LTS is deterministic, so
/// refinement by successor blocks suffices.
pub fn bisimilar(u1: &Usage, u2: &Usage) -> Result<bool, UsageError> {
    require_closed(u1)?;
    require_closed(u2)?;

    let mut states = reachable(u1)?;
    for s in reachable(u2)? {
        if !states.contains(&s) {
            states.push(s);
        }
    }
    let index: HashMap<&Usage, usize> = states.iter().enumerate().map(|(i, s)| (s, i)).collect();

    let mut succ: Vec<BTreeMap<UsageAction, usize>> = Vec::with_capacity(states.len());
    for s in &states {
        let mut m = BTreeMap::new();
        for a in available(s)? {
            if let Some(next) = usage_step(s, &a)? {
                m.insert(a, index[&next]);
            }
        }
        succ.push(m);
    }

    // Initial partition: by available action set. Refine by successor blocks
    // until stable.
    let mut block: Vec<usize> = Vec::with_capacity(states.len());
    {
        let mut sig_to_block: BTreeMap<Vec<UsageAction>, usize> = BTreeMap::new();
        for m in &succ {
            let sig: Vec<UsageAction> = m.keys().cloned().collect();
            let next_id = sig_to_block.len();
            let id = *sig_to_block.entry(sig).or_insert(next_id);
            block.push(id);
        }
    }
    loop {
        let mut sig_to_block: BTreeMap<(usize, Vec<(UsageAction, usize)>), usize> = BTreeMap::new();
        let mut next: Vec<usize> = Vec::with_capacity(states.len());
        for (i, m) in succ.iter().enumerate() {
            let sig: Vec<(UsageAction, usize)> =
                m.iter().map(|(a, &j)| (a.clone(), block[j])).collect();
            let key = (block[i], sig);
            let fresh = sig_to_block.len();
            next.push(*sig_to_block.entry(key).or_insert(fresh));
        }
        if next == block {
            break;
        }
        block = next;
    }
    Ok(block[index[u1]] == block[index[u2]])
}

/// Renders a usage: `{m; w}`, `<l: U>`, `rec X. U`, `end`.
impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Usage::Branch(arms) => {
                write!(f, "{{")?;
                for (i, (m, w)) in arms.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{m}; {w}")?;
                }
                write!(f, "}}")
            }
            Usage::Choice(arms) => {
                write!(f, "<")?;
                for (i, (l, u)) in arms.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{l}: {u}")?;
                }
                write!(f, ">")
            }
            Usage::Rec(x, body) => write!(f, "rec {x}. {body}"),
            Usage::Var(x) => write!(f, "{x}"),
            Usage::End => write!(f, "end"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn branch(arms: &[(&str, Usage)]) -> Usage {
        Usage::Branch(arms.iter().map(|(m, w)| (m.to_string(), w.clone())).collect())
    }

    fn choice(arms: &[(&str, Usage)]) -> Usage {
        Usage::Choice(arms.iter().map(|(l, u)| (l.to_string(), u.clone())).collect())
    }

    fn rec(x: &str, body: Usage) -> Usage {
        Usage::Rec(x.to_string(), Box::new(body))
    }

    fn var(x: &str) -> Usage {
        Usage::Var(x.to_string())
    }

    fn meth(m: &str) -> UsageAction {
        UsageAction::Method(m.to_string())
    }

    fn bank_usage() -> Usage {
        branch(&[(
            "setMoney",
            branch(&[("applyInterest", branch(&[("getMoney", Usage::End)]))]),
        )])
    }

    #[test]
    fn step_bank_account_chain() {
        let next = usage_step(&bank_usage(), &meth("setMoney")).unwrap().unwrap();
        assert_eq!(next, branch(&[("applyInterest", branch(&[("getMoney", Usage::End)]))]));
    }

    #[test]
    fn end_has_no_transitions() {
        assert_eq!(usage_step(&Usage::End, &meth("m")).unwrap(), None);
        assert!(available(&Usage::End).unwrap().is_empty());
    }

    #[test]
    fn rec_steps_through_unfolding() {
        let u = rec("X", branch(&[("m", var("X"))]));
        let next = usage_step(&u, &meth("m")).unwrap().unwrap();
        // The Rec rule substitutes before stepping, so the continuation is the
        // whole recursive usage again.
        assert_eq!(next, u);
        assert_eq!(unfold(&u).unwrap(), branch(&[("m", u.clone())]));
    }

    #[test]
    fn unfold_identity_and_nested() {
        assert_eq!(unfold(&Usage::End).unwrap(), Usage::End);
        let u = rec("X", rec("Y", branch(&[("m", var("X"))])));
        let expected = rec("Y", branch(&[("m", u.clone())]));
        assert_eq!(unfold(&u).unwrap(), expected);
    }

    #[test]
    fn available_sets() {
        let u = branch(&[("m1", Usage::End), ("m2", Usage::End)]);
        let acts = available(&u).unwrap();
        assert_eq!(acts, [meth("m1"), meth("m2")].into_iter().collect());
        let r = rec("X", branch(&[("m", var("X"))]));
        assert_eq!(available(&r).unwrap(), [meth("m")].into_iter().collect());
    }

    #[test]
    fn choice_steps_on_labels() {
        let u = choice(&[("tt", Usage::End), ("ff", branch(&[("m", Usage::End)]))]);
        let next = usage_step(&u, &UsageAction::Label("ff".into())).unwrap().unwrap();
        assert_eq!(next, branch(&[("m", Usage::End)]));
        assert_eq!(usage_step(&u, &meth("m")).unwrap(), None);
    }

    #[test]
    fn bisimilar_examples() {
        let r = rec("X", branch(&[("m", var("X"))]));
        let once = branch(&[("m", r.clone())]);
        assert!(bisimilar(&r, &once).unwrap());

        let small = branch(&[("m", Usage::End)]);
        let big = branch(&[("m", Usage::End), ("n", Usage::End)]);
        assert!(!bisimilar(&small, &big).unwrap());

        assert!(bisimilar(&Usage::End, &rec("X", Usage::End)).unwrap());
    }

    #[test]
    fn terminated_examples() {
        assert!(terminated(&Usage::End).unwrap());
        assert!(!terminated(&branch(&[("m", Usage::End)])).unwrap());
        assert!(terminated(&rec("X", Usage::End)).unwrap());
    }

    #[test]
    fn open_usages_are_rejected() {
        assert_eq!(usage_step(&var("X"), &meth("m")), Err(UsageError::Open("X".into())));
        assert_eq!(available(&branch(&[("m", var("Y"))])), Err(UsageError::Open("Y".into())));
    }

    #[test]
    fn non_contractive_detected() {
        assert_eq!(unfold(&rec("X", var("X"))), Err(UsageError::NonContractive));
        let chained = rec("X", rec("Y", var("X")));
        assert!(!is_contractive(&chained));
        assert_eq!(available(&chained), Err(UsageError::NonContractive));
    }

    #[test]
    fn rendering_matches_notation() {
        let u = rec("X", branch(&[("m", choice(&[("tt", var("X")), ("ff", Usage::End)]))]));
        assert_eq!(u.to_string(), "rec X. {m; <tt: X, ff: end>}");
        assert_eq!(bank_usage().to_string(), "{setMoney; {applyInterest; {getMoney; end}}}");
    }

    #[test]
    fn capture_avoided_in_substitution() {
        // rec Y. rec X. {m; Y}: unfolding the outer binder must not let the
        // inner X capture anything.
        let u = rec("Y", rec("X", branch(&[("m", var("Y"))])));
        let unf = unfold(&u).unwrap();
        assert!(is_closed(&unf));
        assert!(bisimilar(&u, &unf).unwrap());
    }
}
