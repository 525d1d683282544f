use std::net::{IpAddr, Ipv4Addr};

use min_core::tunnel::*;
use proptest::prelude::*;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn header() -> impl Strategy<Value = SignalingHeader> {
    (0u8..16, any::<u32>(), any::<u32>(), any::<[u8; 4]>(), any::<[u8; 4]>(), any::<u16>(), any::<u16>()).prop_map(
        |(f, seq, ack, s, d, sp, dp)| SignalingHeader {
            flags: SegmentFlags::from_bits_truncate(f),
            seq,
            ack,
            src: Ipv4Addr::from(s),
            dst: Ipv4Addr::from(d),
            src_port: sp,
            dst_port: dp,
            payload_len: 0,
        },
    )
}

proptest! {
    #[test]
    fn encapsulation_is_lossless(h in header(), payload in prop::option::of(prop::collection::vec(any::<u8>(), 0..300))) {
        let topo = Topology::for_mode(TunnelMode::IpCcnIp);
        let target = topo.nodes[2].name.clone();
        let i = encapsulate_signal(&topo.registry, &h, payload.clone(), &target, h.conn_id()).unwrap();
        prop_assert!(target.ccn_prefix.is_prefix_of(&i.name));
        let wire = InterestPacket::decode(&i.encode()).unwrap();
        let (back, body) = decapsulate(&wire).unwrap();
        let mut want = h;
        want.payload_len = payload.as_ref().map_or(0, |p| p.len() as u32);
        prop_assert_eq!(back, want);
        prop_assert_eq!(body, payload);
    }

    #[test]
    fn registry_is_a_bijection(octets in prop::collection::hash_set(any::<u8>(), 1..30)) {
        let mut reg = MirRegistry::new();
        for o in &octets {
            let mir = MirName {
                ccn_prefix: format!("/mir{o}").parse().unwrap(),
                ip: IpAddr::V4(Ipv4Addr::new(10, 1, 0, *o)),
            };
            reg.register(mir.clone()).unwrap();
            prop_assert!(reg.register(mir).is_err());
        }
        for o in &octets {
            let p = format!("/mir{o}").parse().unwrap();
            let ip = reg.address_of(&p).unwrap();
            prop_assert_eq!(reg.prefix_of(&ip), Some(&p));
        }
        prop_assert_eq!(reg.len(), octets.len());
    }
}

fn sha(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

#[test]
fn random_payloads_arrive_intact_in_every_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..100u64 {
        let mode = TunnelMode::ALL[trial as usize % 4];
        // Mostly small, with a few multi-megabyte transfers.
        let len = match trial % 25 {
            0 => 16 << 20,
            1..=3 => (rng.next_u32() as usize) % (4 << 20),
            _ => (rng.next_u32() as usize) % 300_000,
        };
        let mut payload = vec![0u8; len];
        rng.fill_bytes(&mut payload);
        let cfg = TunnelConfig {
            seed: trial,
            ..TunnelConfig::default()
        };
        let r = run_scenario(mode, &payload, Topology::for_mode(mode), cfg).unwrap();
        assert_eq!(r.bytes_delivered, len as u64, "trial {trial} {mode:?}");
        assert_eq!(r.digest, sha(&payload), "trial {trial} {mode:?}");
        assert_eq!((r.establish_exchanges, r.terminate_exchanges), (3, 4));
    }
}

#[test]
fn empty_session_still_handshakes() {
    for mode in TunnelMode::ALL {
        let r = run_scenario(mode, &[], Topology::for_mode(mode), TunnelConfig::default()).unwrap();
        assert_eq!(r.bytes_delivered, 0);
        assert_eq!((r.establish_exchanges, r.terminate_exchanges), (3, 4));
    }
}

#[test]
fn control_messages_cross_each_ccn_link_once() {
    for mode in TunnelMode::ALL {
        let ccn_links = mode.links().iter().filter(|l| **l == LinkKind::Ccn).count() as u32;
        let mut c = TunnelConnection::for_mode(mode, TunnelConfig::default()).unwrap();
        let setup = c.establish().unwrap();
        assert!(setup.iter().all(|x| x.ccn_hops == ccn_links), "{mode:?}");
        assert_eq!(c.counters.interests_sent, 3 * ccn_links as u64);
        let down = c.terminate().unwrap();
        let flags: Vec<SegmentFlags> = down.iter().map(|x| x.flags).collect();
        assert_eq!(
            flags,
            [
                SegmentFlags::FIN | SegmentFlags::ACK,
                SegmentFlags::ACK,
                SegmentFlags::FIN | SegmentFlags::ACK,
                SegmentFlags::ACK
            ]
        );
        assert_eq!(c.counters.interests_sent, 7 * ccn_links as u64);
    }
}

#[test]
fn mismatched_topology_is_refused() {
    let err = run_scenario(TunnelMode::IpCcn, b"x", Topology::for_mode(TunnelMode::IpCcnIp), TunnelConfig::default());
    assert!(matches!(err, Err(TunnelError::Topology(_))));
    let mut topo = Topology::for_mode(TunnelMode::IpCcnIp);
    topo.registry = MirRegistry::new();
    assert!(matches!(TunnelConnection::new(topo, TunnelConfig::default()), Err(TunnelError::UnknownMir(_))));
}
