use min_core::model::*;
use proptest::prelude::*;

const MEASURED_ROUND: [f64; 6] = [0.132, 0.150, 0.163, 0.189, 0.217, 0.252];

#[test]
fn hand_evaluated_round_time_at_three_nodes() {
    // 0.0312*27 - 0.1920*9 + 2.0714*3 + 11.25 = 16.5786, over 125.
    let hand: f64 = (0.0312 * 27.0 - 0.1920 * 9.0 + 2.0714 * 3.0 + 11.25) / 125.0;
    assert!((hand - 0.1326288).abs() < 1e-12);
    let row = evaluate(3, 1.0, 125e6);
    assert!((row.t_cons - hand).abs() < 1e-12);
    assert!((consensus_time_fit(3) - hand).abs() < 1e-12);
}

#[test]
fn computation_fit_is_consensus_minus_transmission() {
    for i in 0..4 {
        assert!((COMPUTATION_FIT[i] - (CONSENSUS_FIT[i] - TRANSMISSION_FIT[i])).abs() < 1e-12);
    }
    for n in 2..=300 {
        let lhs = fitted_computation(n) + fitted_transmission(n, PROTOTYPE_BAND);
        assert!((lhs - consensus_time_fit(n)).abs() < 1e-12 * consensus_time_fit(n).abs().max(1.0));
    }
}

#[test]
fn fit_tracks_measured_rounds() {
    for (i, want) in MEASURED_ROUND.iter().enumerate() {
        let got = consensus_time_fit(i as u32 + 3);
        assert!((got / want - 1.0).abs() < 0.05, "n={} fit {got} vs {want}", i + 3);
    }
}

#[test]
fn transmission_volume_disagrees_with_printed_fit() {
    let r = coefficient_report(&ModelParams::prototype(3));
    // Per-node volumes: 3M + H + TK + H_r = 401660, R_b + H_v = 800, V_b = 100.
    let a = 3.0 * 266.0 + 692.0 + 40.0 * 10000.0 + 170.0;
    assert!((r.structural[2] - (a - 800.0) / 1e6).abs() < 1e-15);
    assert!((r.structural[2] - 0.40086).abs() < 1e-9);
    assert!((r.linear_ratio - 0.40086 / 0.3213).abs() < 1e-9);
    assert!(!r.is_consistent(0.01));
}

proptest! {
    #[test]
    fn transmission_is_additive(n in 2u32..400, band in 1e6f64..1e10) {
        let p = ModelParams::prototype(n).with_band(band);
        let t = transmission_times(&p);
        prop_assert_eq!(t.t_tran, t.t_tran1 + t.t_tran2 + t.t_tran3);
        let b = breakdown(&p);
        prop_assert_eq!(b.t_cons, b.t_comp + b.t_tran);
    }

    #[test]
    fn scaled_forms_agree(n in 3u32..400, a in 0.1f64..100.0) {
        let x = scaled_computation(n, a);
        let y = scaled_computation_expanded(n, a);
        prop_assert!((x / y - 1.0).abs() < 2e-3, "{} vs {}", x, y);
    }
}

#[test]
fn throughput_limit_is_monotone_on_the_grid() {
    let a_values = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0];
    let bands = [1e6, 12.5e6, 125e6, 1.25e9, 12.5e9];
    for n in 3..=200 {
        for w in a_values.windows(2) {
            for &b in &bands {
                assert!(throughput_limit(n, w[1], b) > throughput_limit(n, w[0], b), "n={n} a {w:?} band {b}");
            }
        }
        for w in bands.windows(2) {
            for &a in &a_values {
                assert!(throughput_limit(n, a, w[1]) > throughput_limit(n, a, w[0]), "n={n} a {a} band {w:?}");
            }
        }
    }
}
