//! Closed-form APoV performance model.
//!
//! Sizes are bytes and bandwidth is bytes per second. The fitted polynomials
//! take their numerators in decimal megabytes, so a fitted transmission time
//! is `numerator / (band / 1e6)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: u32,
    pub n_b: u32,
    pub n_c: u32,
    pub n_bc: u32,
    /// Message header.
    pub m: f64,
    /// Block header.
    pub h: f64,
    /// Transaction.
    pub t: f64,
    /// Vote message header.
    pub h_v: f64,
    /// Single validation vote.
    pub v_b: f64,
    /// Block group header without votes.
    pub h_r: f64,
    /// Per-block tally record.
    pub r_b: f64,
    /// Transactions per block.
    pub k: f64,
    /// Bytes per second, same on uplink and downlink.
    pub band: f64,
    /// Computing-power multiple.
    pub a: f64,
}

pub const PROTOTYPE_BAND: f64 = 125e6;

impl ModelParams {
    /// Prototype sizes with every node a bookkeeper and the round leader
    /// outside the consortium.
    pub fn prototype(n: u32) -> Self {
        ModelParams {
            n,
            n_b: n,
            n_c: n.saturating_sub(1),
            n_bc: n.saturating_sub(1),
            m: 266.0,
            h: 692.0,
            t: 40.0,
            h_v: 400.0,
            v_b: 100.0,
            h_r: 170.0,
            r_b: 400.0,
            k: 10000.0,
            band: PROTOTYPE_BAND,
            a: 1.0,
        }
    }

    pub fn with_band(self, band: f64) -> Self {
        ModelParams { band, ..self }
    }

    pub fn with_roles(self, n_b: u32, n_c: u32, n_bc: u32) -> Self {
        ModelParams {
            n_b,
            n_c,
            n_bc,
            ..self
        }
    }

    /// Nodes other than the sender that receive each broadcast.
    fn fanout(&self) -> f64 {
        (self.n_b + self.n_c) as f64 - self.n_bc as f64 - 1.0
    }

    /// Bytes of one published block.
    pub fn block_bytes(&self) -> f64 {
        self.m + self.h + self.t * self.k
    }

    /// Bytes of one vote message.
    pub fn vote_message_bytes(&self) -> f64 {
        self.m + self.h_v + self.n_b as f64 * self.v_b
    }

    /// Bytes of one block group header broadcast.
    pub fn group_header_bytes(&self) -> f64 {
        self.m
            + self.h_r
            + self.n_b as f64 * self.r_b
            + self.n_c as f64 * (self.h_v + self.n_b as f64 * self.v_b)
    }

    pub fn validate(&self) -> Result<(), String> {
        let sizes = [
            self.m, self.h, self.t, self.h_v, self.v_b, self.h_r, self.r_b, self.k, self.band,
            self.a,
        ];
        if sizes.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err("sizes, K, band and a must be positive".into());
        }
        if self.n_b < 1 || self.n_c < 1 || self.n_bc > self.n_b.min(self.n_c) {
            return Err("need n_b, n_c ≥ 1 and n_bc ≤ min(n_b, n_c)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmissionTimes {
    pub t_tran1: f64,
    pub t_tran2: f64,
    pub t_tran3: f64,
    pub t_tran: f64,
}

pub fn transmission_times(p: &ModelParams) -> TransmissionTimes {
    let t_tran1 = p.fanout() * p.block_bytes() / p.band;
    let t_tran2 = p.n_c as f64 * p.vote_message_bytes() / p.band;
    let t_tran3 = p.fanout() * p.group_header_bytes() / p.band;
    TransmissionTimes {
        t_tran1,
        t_tran2,
        t_tran3,
        t_tran: t_tran1 + t_tran2 + t_tran3,
    }
}

/// Fitted per-step computation times in seconds for `n` nodes.
pub fn computation_times(n: u32) -> [f64; 4] {
    let n = n as f64;
    [
        0.0041 * n + 0.0174,
        0.0130 * n + 0.0229,
        0.0012 * n * n - 0.0082 * n + 0.0415,
        0.0052 * n + 0.0062,
    ]
}

fn cubic(c: [f64; 4], n: f64) -> f64 {
    ((c[0] * n + c[1]) * n + c[2]) * n + c[3]
}

/// Fitted round-time numerator, MB.
pub const CONSENSUS_FIT: [f64; 4] = [0.0312, -0.1920, 2.0714, 11.2500];
/// Fitted transmission numerator, MB.
pub const TRANSMISSION_FIT: [f64; 4] = [0.0001, 0.0008, 0.3213, -0.3214];
/// Fitted computation numerator; equals the first fit minus the second.
pub const COMPUTATION_FIT: [f64; 4] = [0.0311, -0.1928, 1.7501, 11.5714];

/// Fitted round time in seconds at the prototype bandwidth.
pub fn consensus_time_fit(n: u32) -> f64 {
    cubic(CONSENSUS_FIT, n as f64) / 125.0
}

/// Fitted transmission time in seconds at `band` bytes per second.
pub fn fitted_transmission(n: u32, band: f64) -> f64 {
    cubic(TRANSMISSION_FIT, n as f64) / (band / 1e6)
}

/// Fitted computation time in seconds.
pub fn fitted_computation(n: u32) -> f64 {
    cubic(COMPUTATION_FIT, n as f64) / 125.0
}

/// Computation time with `a`-fold computing power, written as a correction
/// factor on the fitted computation time.
pub fn scaled_computation(n: u32, a: f64) -> f64 {
    let nf = n as f64;
    let correction = (0.0012 * nf * nf + 0.0141 * nf + 0.0880) / (nf * (0.0223 * nf + 0.0465));
    fitted_computation(n) / a * (1.0 + correction)
}

/// The same quantity as [`scaled_computation`] in its expanded rational form.
pub fn scaled_computation_expanded(n: u32, a: f64) -> f64 {
    let nf = n as f64;
    (0.0235 * nf * nf + 0.0606 * nf + 0.0880) * cubic(COMPUTATION_FIT, nf)
        / (a * (2.7875 * nf * nf + 5.8125 * nf))
}

/// Upper bound on transactions per second.
pub fn throughput_limit(n: u32, a: f64, band: f64) -> f64 {
    10000.0 * n as f64 / (scaled_computation(n, a) + fitted_transmission(n, band))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingBreakdown {
    pub t_tran1: f64,
    pub t_tran2: f64,
    pub t_tran3: f64,
    pub t_tran: f64,
    pub t_comp1: f64,
    pub t_comp2: f64,
    pub t_comp3: f64,
    pub t_comp4: f64,
    pub t_comp: f64,
    pub t_cons: f64,
    pub t_comp_scaled: f64,
    pub t_cons_prime: f64,
    pub throughput: f64,
}

/// Structural transmission and per-step computation for `p`, plus the
/// scaled and limit figures from the fitted forms.
pub fn breakdown(p: &ModelParams) -> TimingBreakdown {
    let tr = transmission_times(p);
    let c = computation_times(p.n);
    let t_comp = c.iter().sum::<f64>();
    let t_comp_scaled = scaled_computation(p.n, p.a);
    let t_cons_prime = t_comp_scaled + fitted_transmission(p.n, p.band);
    TimingBreakdown {
        t_tran1: tr.t_tran1,
        t_tran2: tr.t_tran2,
        t_tran3: tr.t_tran3,
        t_tran: tr.t_tran,
        t_comp1: c[0],
        t_comp2: c[1],
        t_comp3: c[2],
        t_comp4: c[3],
        t_comp,
        t_cons: t_comp + tr.t_tran,
        t_comp_scaled,
        t_cons_prime,
        throughput: 10000.0 * p.n as f64 / t_cons_prime,
    }
}

/// One row of `n,a,band,t_tran,t_comp,t_cons,throughput`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub n: u32,
    pub a: f64,
    pub band: f64,
    pub t_tran: f64,
    pub t_comp: f64,
    pub t_cons: f64,
    pub throughput: f64,
}

/// Fitted transmission at `band`, fitted computation, their sum, and the
/// throughput limit at computing power `a`.
pub fn evaluate(n: u32, a: f64, band: f64) -> EvalRow {
    let t_tran = fitted_transmission(n, band);
    let t_comp = fitted_computation(n);
    EvalRow {
        n,
        a,
        band,
        t_tran,
        t_comp,
        t_cons: t_comp + t_tran,
        throughput: throughput_limit(n, a, band),
    }
}

pub fn sweep_grid(ns: &[u32], a_values: &[f64], bands: &[f64]) -> Vec<EvalRow> {
    let mut rows = Vec::with_capacity(ns.len() * a_values.len() * bands.len());
    for &n in ns {
        for &a in a_values {
            for &band in bands {
                rows.push(evaluate(n, a, band));
            }
        }
    }
    rows
}

pub fn write_rows<W: Write>(w: W, rows: &[EvalRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Cubic coefficients (highest first, MB) of the structural transmission
/// volume under the prototype role split, set against the printed fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub structural: [f64; 4],
    pub printed: [f64; 4],
    pub max_abs_diff: f64,
    pub linear_ratio: f64,
}

impl CoefficientReport {
    pub fn is_consistent(&self, tolerance: f64) -> bool {
        self.max_abs_diff <= tolerance
    }
}

/// With `n_b = n`, `n_c = n_bc = n - 1` the total volume is
/// `(n - 1)(A + B n + C n^2)` with `A = 3M + H + TK + H_r`,
/// `B = R_b + H_v`, `C = V_b`.
pub fn transmission_coefficients(p: &ModelParams) -> [f64; 4] {
    let a = 3.0 * p.m + p.h + p.t * p.k + p.h_r;
    let b = p.r_b + p.h_v;
    let c = p.v_b;
    [c / 1e6, (b - c) / 1e6, (a - b) / 1e6, -a / 1e6]
}

pub fn coefficient_report(p: &ModelParams) -> CoefficientReport {
    let structural = transmission_coefficients(p);
    let max_abs_diff = structural
        .iter()
        .zip(TRANSMISSION_FIT)
        .map(|(s, f)| (s - f).abs())
        .fold(0.0, f64::max);
    CoefficientReport {
        structural,
        printed: TRANSMISSION_FIT,
        max_abs_diff,
        linear_ratio: structural[2] / TRANSMISSION_FIT[2],
    }
}
