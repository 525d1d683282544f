//! Builds a small FIB, shows entry states after reconstruction, and runs a
//! lookup that needs backtracking.

use min_core::fib::Hpt;
use min_core::names::{ContentName, ForwardingInfo, Identifier};

fn name(s: &str) -> ContentName {
    s.parse().expect("valid name")
}

fn main() {
    let mut fib = Hpt::new();
    fib.insert(&name("/video"), ForwardingInfo::face(1));
    fib.insert(&name("/video/sports/live/hd"), ForwardingInfo::face(2));
    fib.insert(&name("/news/today"), ForwardingInfo::face(3));

    for e in fib.entries() {
        println!("{:<24} {:<12} {:?}", e.name, e.state.as_str(), e.forwarding.map(|f| f.face_id));
    }

    // "/video/sports/live" exists as a filler, so binary search lands there
    // and has to fall back to "/video".
    for q in ["/video/sports/live/sd", "/video/sports/live/hd/1080", "/news/yesterday", "/music"] {
        let r = fib.lookup_lpm(&name(q));
        println!(
            "{q:<28} -> {:<24} probes {} (oracle agrees: {})",
            r.matched_prefix().map_or("MISS".to_string(), |p| p.to_string()),
            r.probes,
            r.outcome == fib.lookup_oracle(&name(q)).outcome
        );
    }

    let alice: Identifier = "id:alice".parse().unwrap();
    fib.bind_identifier(&name("/news/today"), alice.clone()).unwrap();
    println!("{alice} translates to {}", fib.translate(&alice).unwrap());
    println!("integrity violations: {}", fib.verify_integrity().len());
}
