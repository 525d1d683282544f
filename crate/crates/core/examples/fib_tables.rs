//! Desk-scale name-search tables: all-miss and all-hit probe counts for
//! binary search over prefix lengths against a linear scan.

use min_core::workload::{run_bench, QueryMode, WorkloadSpec};

fn main() {
    println!("all MISS (M = 4)");
    println!("{:>3} {:>8} {:>8} {:>8}", "N", "linear", "binary", "ratio%");
    for n in 6..=10 {
        let spec = WorkloadSpec {
            query_len: n,
            mode: QueryMode::Miss,
            ..WorkloadSpec::default()
        };
        let r = run_bench(&spec, 1).expect("feasible");
        println!("{n:>3} {:>8.2} {:>8.2} {:>8.0}", r.avg_probes_linear, r.avg_probes_binary, r.throughput_ratio);
    }
    for m in [3.0, 4.0] {
        println!("all HIT (M = {m})");
        println!("{:>3} {:>8} {:>8} {:>8}", "N", "linear", "binary", "ratio%");
        for n in 6..=10 {
            let spec = WorkloadSpec {
                query_len: n,
                mean_len: m,
                mode: QueryMode::Hit,
                ..WorkloadSpec::default()
            };
            let r = run_bench(&spec, 1).expect("feasible");
            println!("{n:>3} {:>8.2} {:>8.2} {:>8.0}", r.avg_probes_linear, r.avg_probes_binary, r.throughput_ratio);
        }
    }
}
