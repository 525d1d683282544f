//! Replays the six-row consensus timing table in virtual time.

use min_core::model;
use min_core::sim::{run_rounds, SimConfig};

fn main() {
    println!("{:>2} {:>8} {:>8} {:>8} {:>8} {:>9} {:>10}", "n", "t1", "t2", "t3", "t4", "round", "tx/s");
    for n in 3..=8 {
        let report = run_rounds(&SimConfig::prototype(n)).expect("valid config");
        let mean = |f: fn(&min_core::sim::RoundMetrics) -> f64| {
            report.rounds.iter().map(f).sum::<f64>() / report.rounds.len() as f64
        };
        println!(
            "{n:>2} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>9.4} {:>10.0}   fit {:.4}",
            mean(|m| m.t1),
            mean(|m| m.t2),
            mean(|m| m.t3),
            mean(|m| m.t4),
            report.summary.mean_round_time,
            report.summary.throughput,
            model::consensus_time_fit(n),
        );
    }
}
