//! Evaluates the round-time model over node counts, shows throughput bounds
//! and the transmission coefficient mismatch.

use min_core::model::{self, ModelParams};

fn main() {
    println!("{:>4} {:>9} {:>9} {:>9} {:>12}", "n", "t_tran", "t_comp", "t_cons", "limit tx/s");
    for n in [3, 5, 8, 16, 32, 64, 128, 200] {
        let r = model::evaluate(n, 1.0, model::PROTOTYPE_BAND);
        println!("{n:>4} {:>9.4} {:>9.4} {:>9.4} {:>12.0}", r.t_tran, r.t_comp, r.t_cons, r.throughput);
    }
    println!("faster compute (a = 4) and a 10x link at n = 32:");
    for (a, band) in [(1.0, 125e6), (4.0, 125e6), (1.0, 1.25e9), (4.0, 1.25e9)] {
        println!("  a {a:<4} band {band:>8.3e}: {:>10.0} tx/s", model::throughput_limit(32, a, band));
    }
    let c = model::coefficient_report(&ModelParams::prototype(3));
    println!("structural transmission coefficients {:?}", c.structural);
    println!("printed fit                          {:?}", c.printed);
    println!("linear term ratio {:.3}", c.linear_ratio);
}
