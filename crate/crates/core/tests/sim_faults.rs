use min_core::sim::*;

fn base(nodes: u32, rounds: u32, k: u32) -> SimConfig {
    SimConfig {
        nodes,
        rounds,
        k,
        ..SimConfig::default()
    }
}

#[test]
fn fault_free_runs_never_diverge_and_are_deterministic() {
    let cfg = base(5, 60, 200);
    let a = run_rounds(&cfg).unwrap();
    assert_eq!(a.summary.rounds_completed, 60);
    assert_eq!(a.summary.divergent_rounds, 0);
    assert!(a.rounds.iter().all(|r| !r.forked && r.excluded.is_empty()));
    assert_eq!(a.summary.committed_txs, 60 * 5 * 200);
    let tips: Vec<_> = a.summary.tips.iter().collect();
    assert!(tips.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(run_rounds(&cfg).unwrap(), a);
}

#[test]
fn invalid_blocks_are_excluded_every_round() {
    let cfg = inject_fault(
        &base(4, 30, 500),
        FaultSpec {
            node: 3,
            behavior: FaultBehavior::InvalidBlocks,
        },
    )
    .unwrap();
    let r = run_rounds(&cfg).unwrap();
    assert_eq!(r.summary.rounds_completed, 30);
    assert_eq!(r.summary.divergent_rounds, 0);
    for m in &r.rounds {
        assert_eq!(m.excluded, [3], "round {}", m.round);
        assert_eq!(m.committed_txs, 500 * 3);
    }
}

#[test]
fn dissenting_minority_cannot_block_commits() {
    let cfg = inject_fault(
        &base(5, 20, 100),
        FaultSpec {
            node: 1,
            behavior: FaultBehavior::DissentingVotes,
        },
    )
    .unwrap();
    let r = run_rounds(&cfg).unwrap();
    assert_eq!(r.summary.divergent_rounds, 0);
    assert!(r.rounds.iter().all(|m| m.committed_txs == 500));
}

#[test]
fn crash_leaves_earlier_rounds_untouched_then_stalls() {
    let clean = run_rounds(&base(4, 12, 300)).unwrap();
    let cfg = inject_fault(
        &base(4, 12, 300),
        FaultSpec {
            node: 2,
            behavior: FaultBehavior::CrashAtRound(6),
        },
    )
    .unwrap();
    let crashed = run_rounds(&cfg).unwrap();
    let stall = crashed.summary.stall.as_ref().expect("a voter went silent");
    assert_eq!(stall.round, 6);
    assert_eq!(crashed.summary.rounds_completed, 5);
    for (a, b) in crashed.rounds.iter().zip(&clean.rounds).take(4) {
        assert_eq!(a, b, "round {}", a.round);
    }
    assert_eq!(crashed.summary.divergent_rounds, 0);
}

#[test]
fn unknown_fault_node_is_rejected() {
    let err = inject_fault(
        &base(3, 1, 10),
        FaultSpec {
            node: 9,
            behavior: FaultBehavior::InvalidBlocks,
        },
    )
    .unwrap_err();
    assert_eq!(err, SimError::UnknownNode { node: 9, nodes: 3 });
}
