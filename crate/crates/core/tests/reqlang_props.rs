//! DFA pipeline equivalence against a reference path-set matcher.
//!
//! Random path expressions are compiled through the full pipeline (Thompson →
//! subset DFA → pruning → products) and compared on every device sequence up
//! to length 5 against a small recursive matcher that works directly on the
//! expression tree — a completely separate evaluation route.

use std::collections::BTreeSet;

use dpv_core::datamodel::{DeviceId, Topology};
use dpv_core::hsa::{FieldLayout, HeaderSpace};
use dpv_core::reqlang::{compile, ResolvedPath, ResolvedRequirement, DEFAULT_STATE_BUDGET};
use proptest::prelude::*;

const N_DEV: usize = 4;
const MAX_LEN: usize = 5;

/// End positions reachable by matching `p` against `seq[start..]`.
fn ends(p: &ResolvedPath, seq: &[usize], start: usize) -> BTreeSet<usize> {
    match p {
        ResolvedPath::Devs(devs) => {
            let mut out = BTreeSet::new();
            if start < seq.len() && devs.contains(&DeviceId(seq[start] as u32)) {
                out.insert(start + 1);
            }
            out
        }
        ResolvedPath::Concat(l, r) => {
            let mut out = BTreeSet::new();
            for e in ends(l, seq, start) {
                out.extend(ends(r, seq, e));
            }
            out
        }
        ResolvedPath::Alt(l, r) => {
            let mut out = ends(l, seq, start);
            out.extend(ends(r, seq, start));
            out
        }
        // A substring is in the intersection exactly when both sides accept
        // it, i.e. when its end position is reachable through both.
        ResolvedPath::Inter(l, r) => ends(l, seq, start)
            .intersection(&ends(r, seq, start))
            .copied()
            .collect(),
        ResolvedPath::Star(e) => {
            let mut out = BTreeSet::new();
            out.insert(start);
            let mut work = vec![start];
            while let Some(s) = work.pop() {
                for t in ends(e, seq, s) {
                    if out.insert(t) {
                        work.push(t);
                    }
                }
            }
            out
        }
        ResolvedPath::Plus(e) => {
            let star = ResolvedPath::Star(e.clone());
            let mut out = BTreeSet::new();
            for s in ends(e, seq, start) {
                out.extend(ends(&star, seq, s));
            }
            out
        }
        ResolvedPath::Opt(e) => {
            let mut out = ends(e, seq, start);
            out.insert(start);
            out
        }
    }
}

fn reference_accepts(p: &ResolvedPath, seq: &[usize]) -> bool {
    ends(p, seq, 0).contains(&seq.len())
}

fn devs_strat() -> impl Strategy<Value = ResolvedPath> {
    proptest::collection::btree_set(0..N_DEV as u32, 0..=N_DEV)
        .prop_map(|s| ResolvedPath::Devs(s.into_iter().map(DeviceId).collect()))
}

/// Pure regexes: no intersection (those may not nest under concat/star).
fn pure_strat() -> impl Strategy<Value = ResolvedPath> {
    devs_strat().prop_recursive(3, 24, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone())
                .prop_map(|(l, r)| ResolvedPath::Concat(Box::new(l), Box::new(r))),
            (inner.clone(), inner.clone())
                .prop_map(|(l, r)| ResolvedPath::Alt(Box::new(l), Box::new(r))),
            inner.clone().prop_map(|e| ResolvedPath::Star(Box::new(e))),
            inner.clone().prop_map(|e| ResolvedPath::Plus(Box::new(e))),
            inner.prop_map(|e| ResolvedPath::Opt(Box::new(e))),
        ]
    })
}

/// Top-level combos: ∩/∪ folds over pure regexes.
fn combo_strat() -> impl Strategy<Value = ResolvedPath> {
    (
        proptest::collection::vec(pure_strat(), 1..4),
        proptest::collection::vec(prop_oneof![Just(true), Just(false)], 3),
    )
        .prop_map(|(parts, ops)| {
            let mut it = parts.into_iter();
            let mut acc = it.next().unwrap();
            for (i, p) in it.enumerate() {
                acc = if ops[i % ops.len()] {
                    ResolvedPath::Inter(Box::new(acc), Box::new(p))
                } else {
                    ResolvedPath::Alt(Box::new(acc), Box::new(p))
                };
            }
            acc
        })
}

fn check_equivalence(path: ResolvedPath) -> Result<(), TestCaseError> {
    let mut topo = Topology::new(FieldLayout::new(8).unwrap());
    for i in 0..N_DEV {
        topo.add_device(&format!("n{i}"), &[]).unwrap();
    }
    let req = ResolvedRequirement {
        sources: vec![DeviceId(0)],
        space: HeaderSpace::full(8),
        path: path.clone(),
    };
    let dfa = compile(&req, &topo, DEFAULT_STATE_BUDGET).unwrap();
    let mut seq = Vec::new();
    enumerate_seqs(&mut seq, &dfa, &path)?;
    Ok(())
}

fn enumerate_seqs(
    seq: &mut Vec<usize>,
    dfa: &dpv_core::reqlang::PathDfa,
    path: &ResolvedPath,
) -> Result<(), TestCaseError> {
    let got = dfa.accepts(seq.iter().copied());
    let want = reference_accepts(path, seq);
    prop_assert_eq!(got, want, "sequence {:?} of {:?}", seq, path);
    if seq.len() == MAX_LEN {
        return Ok(());
    }
    for d in 0..N_DEV {
        seq.push(d);
        enumerate_seqs(seq, dfa, path)?;
        seq.pop();
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn pure_regex_dfa_matches_reference(path in pure_strat()) {
        check_equivalence(path)?;
    }

    #[test]
    fn combo_dfa_matches_reference(path in combo_strat()) {
        check_equivalence(path)?;
    }
}
