use std::collections::BTreeMap;

use min_core::fib::{Hpt, LookupOutcome};
use min_core::names::{ContentName, ForwardingInfo};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Insert(Vec<u8>, u32),
    Delete(Vec<u8>),
}

fn name(parts: &[u8]) -> ContentName {
    ContentName::from_components(parts.iter().map(|p| format!("k{p}"))).unwrap()
}

fn parts(max_len: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..4, 1..=max_len)
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (parts(6), 1u32..50).prop_map(|(p, f)| Op::Insert(p, f)),
        2 => parts(6).prop_map(Op::Delete),
    ]
}

/// Reference model: the set of real names and their faces.
fn apply(fib: &mut Hpt, model: &mut BTreeMap<Vec<u8>, u32>, op: &Op) {
    match op {
        Op::Insert(p, f) => {
            fib.insert(&name(p), ForwardingInfo::face(*f));
            model.insert(p.clone(), *f);
        }
        Op::Delete(p) => {
            let existed = fib.delete(&name(p));
            assert_eq!(existed, model.remove(p).is_some());
        }
    }
}

/// Longest stored prefix of `q` in the model.
fn model_lpm(model: &BTreeMap<Vec<u8>, u32>, q: &[u8]) -> Option<(usize, u32)> {
    (1..=q.len()).rev().find_map(|k| model.get(&q[..k]).map(|f| (k, *f)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn binary_lookup_agrees_with_linear_and_model(ops in prop::collection::vec(op(), 1..80), queries in prop::collection::vec(parts(9), 1..40)) {
        let mut fib = Hpt::new();
        let mut model = BTreeMap::new();
        for o in &ops {
            apply(&mut fib, &mut model, o);
        }
        prop_assert!(fib.verify_integrity().is_empty(), "{:?}", fib.verify_integrity());
        prop_assert_eq!(fib.len(), model.len());
        for q in &queries {
            let qn = name(q);
            let bin = fib.lookup_lpm(&qn);
            let lin = fib.lookup_oracle(&qn);
            prop_assert_eq!(&bin.outcome, &lin.outcome);
            let expected = model_lpm(&model, q);
            match (&bin.outcome, expected) {
                (LookupOutcome::Hit { matched_prefix, forwarding }, Some((k, f))) => {
                    prop_assert_eq!(matched_prefix.len(), k);
                    prop_assert_eq!(forwarding.face_id, f);
                }
                (LookupOutcome::Miss, None) => {}
                (got, want) => prop_assert!(false, "query {:?}: got {:?}, want {:?}", q, got, want),
            }
            // Binary search over lengths 1..=len.
            let bound = usize::BITS - q.len().leading_zeros();
            prop_assert!(bin.probes <= bound, "{} probes for length {}", bin.probes, q.len());
            prop_assert_eq!(lin.probes as usize, expected.map_or(q.len(), |(k, _)| q.len() - k + 1));
        }
    }

    #[test]
    fn insert_then_delete_restores_the_table(ops in prop::collection::vec(op(), 0..40), extra in parts(7)) {
        let mut fib = Hpt::new();
        let mut model = BTreeMap::new();
        for o in &ops {
            apply(&mut fib, &mut model, o);
        }
        prop_assume!(!model.contains_key(&extra));
        let mut before = Vec::new();
        fib.dump(&mut before).unwrap();
        fib.insert(&name(&extra), ForwardingInfo::face(99));
        prop_assert!(fib.verify_integrity().is_empty());
        prop_assert!(fib.delete(&name(&extra)));
        let mut after = Vec::new();
        fib.dump(&mut after).unwrap();
        prop_assert_eq!(String::from_utf8(before).unwrap(), String::from_utf8(after).unwrap());
    }

    #[test]
    fn dump_load_round_trip(ops in prop::collection::vec(op(), 0..60)) {
        let mut fib = Hpt::new();
        let mut model = BTreeMap::new();
        for o in &ops {
            apply(&mut fib, &mut model, o);
        }
        let mut text = Vec::new();
        fib.dump(&mut text).unwrap();
        let back = Hpt::load(text.as_slice()).unwrap();
        let mut again = Vec::new();
        back.dump(&mut again).unwrap();
        prop_assert_eq!(text, again);
        prop_assert_eq!(back.entry_count(), fib.entry_count());
    }
}

#[test]
fn backtracking_avoids_the_false_negative() {
    let mut fib = Hpt::new();
    fib.insert(&"/a".parse().unwrap(), ForwardingInfo::face(1));
    fib.insert(&"/a/b/c/d".parse().unwrap(), ForwardingInfo::face(2));
    let q: ContentName = "/a/b/x".parse().unwrap();
    let classic = fib.lookup_binary_no_backtrack(&q);
    let ours = fib.lookup_lpm(&q);
    assert!(!classic.is_hit());
    assert_eq!(ours.matched_prefix().map(|p| p.as_str()), Some("/a"));
    assert_eq!(ours.outcome, fib.lookup_oracle(&q).outcome);
}
