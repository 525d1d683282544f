//! Carries a TCP-like session over each tunnel mode and prints the control
//! trace and counters.

use min_core::tunnel::{run_scenario, Topology, TunnelConfig, TunnelConnection, TunnelMode};

fn main() {
    let mut c = TunnelConnection::for_mode(TunnelMode::IpCcnIp, TunnelConfig::default()).unwrap();
    for x in c.establish().unwrap() {
        println!("setup    {} {:?} over {} CCN hop(s)", if x.from_client { "c->s" } else { "s->c" }, x.flags, x.ccn_hops);
    }
    c.send(b"hello over named data").unwrap();
    println!("server got {:?}", String::from_utf8_lossy(c.received()));
    for x in c.terminate().unwrap() {
        println!("teardown {} {:?}", if x.from_client { "c->s" } else { "s->c" }, x.flags);
    }

    let payload: Vec<u8> = (0..1u32 << 20).map(|i| (i * 31 % 251) as u8).collect();
    for mode in TunnelMode::ALL {
        let cfg = TunnelConfig {
            loss: 0.02,
            ..TunnelConfig::default()
        };
        let r = run_scenario(mode, &payload, Topology::for_mode(mode), cfg).unwrap();
        println!(
            "{:<10} intact {} interests {} exchanges {}+{}",
            mode.as_str(),
            r.intact(),
            r.interests_total,
            r.establish_exchanges,
            r.terminate_exchanges
        );
    }
}
