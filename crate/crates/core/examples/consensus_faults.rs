//! Runs the simulator with each fault behavior and prints what happened.

use min_core::sim::{inject_fault, run_rounds, FaultBehavior, FaultSpec, SimConfig};

fn main() {
    let base = SimConfig {
        nodes: 5,
        rounds: 20,
        k: 2000,
        ..SimConfig::default()
    };
    let faults = [
        FaultBehavior::InvalidBlocks,
        FaultBehavior::DissentingVotes,
        FaultBehavior::CrashAtRound(8),
    ];
    for behavior in faults {
        let cfg = inject_fault(&base, FaultSpec { node: 2, behavior }).unwrap();
        let r = run_rounds(&cfg).unwrap();
        let s = &r.summary;
        println!(
            "{behavior:?}: {} rounds, {} txs, {} divergent, excluded in round 1: {:?}, stall: {}",
            s.rounds_completed,
            s.committed_txs,
            s.divergent_rounds,
            r.rounds.first().map(|m| m.excluded.clone()).unwrap_or_default(),
            s.stall.as_ref().map_or("none".into(), |st| format!("round {} ({})", st.round, st.reason)),
        );
    }
}
