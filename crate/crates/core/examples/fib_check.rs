//! Random insert/delete churn against the FIB with periodic integrity checks.

use min_core::workload::fib_check;

fn main() {
    let r = fib_check(20_000, 20_000, 50, 8, 2_000, 5);
    println!(
        "{} inserts, {} deletes, {} lookups, {} checks, {} violations, {} mismatches",
        r.inserts,
        r.deletes,
        r.lookups,
        r.checks,
        r.violations.len(),
        r.lookup_mismatches
    );
}
