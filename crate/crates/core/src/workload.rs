//! Synthetic FIB workloads and lookup benchmarks.
//!
//! Entry names are URL-like: components are drawn uniformly from an
//! alphabet of `c<hex>` tokens and name lengths follow a geometric
//! distribution truncated to `1..=max_len` with mean `M`.
//!
//! * Miss queries start with a component from a disjoint `m<hex>` pool, so
//!   no prefix of them is stored.
//! * Hit queries take a stored real name and append fresh `s<hex>`
//!   components, so the stored name is the longest match.
//!
//! Query lengths spread over `N-2..=N+2` in antithetic pairs, which keeps
//! the average at exactly `N` (or `N - M` appended components for hits).

use std::collections::HashSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fib::{Hpt, LookupOutcome};
use crate::names::{ContentName, ForwardingInfo};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error("infeasible workload: {0}")]
    InfeasibleSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    Hit,
    Miss,
    Mixed,
}

impl std::str::FromStr for QueryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hit" => Ok(QueryMode::Hit),
            "miss" => Ok(QueryMode::Miss),
            "mixed" => Ok(QueryMode::Mixed),
            _ => Err(format!("unknown mode {s:?} (expected hit, miss or mixed)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub entry_count: usize,
    pub queries: usize,
    /// Mean stored-name length `M`, in components.
    pub mean_len: f64,
    /// Mean query length `N`, in components.
    pub query_len: usize,
    pub mode: QueryMode,
    /// Component pool size; `None` means `entry_count`.
    pub alphabet: Option<usize>,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            entry_count: 100_000,
            queries: 50_000,
            mean_len: 4.0,
            query_len: 6,
            mode: QueryMode::Miss,
            alphabet: None,
            max_len: 10,
            seed: 1,
        }
    }
}

impl WorkloadSpec {
    pub fn alphabet_size(&self) -> usize {
        self.alphabet.unwrap_or(self.entry_count).max(1)
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: String| Err(WorkloadError::InfeasibleSpec(m));
        if self.entry_count < 1 {
            return bad("entry_count must be at least 1".into());
        }
        if self.query_len < 1 || self.max_len < 1 {
            return bad("query and name lengths must be at least 1".into());
        }
        if !(self.mean_len >= 1.0 && self.mean_len <= self.max_len as f64) {
            return bad(format!("mean length {} outside [1, {}]", self.mean_len, self.max_len));
        }
        if self.mode != QueryMode::Miss && (self.query_len as f64) < self.mean_len {
            return bad(format!(
                "hit queries need N >= M, got N = {} and M = {}",
                self.query_len, self.mean_len
            ));
        }
        let a = self.alphabet_size() as f64;
        let capacity: f64 = (1..=self.max_len).map(|k| a.powi(k as i32)).sum();
        if capacity < 2.0 * self.entry_count as f64 {
            return bad(format!(
                "alphabet of {} cannot supply {} distinct names comfortably",
                self.alphabet_size(),
                self.entry_count
            ));
        }
        Ok(())
    }
}

/// Geometric distribution on `1..=max` conditioned to have the given mean.
#[derive(Debug, Clone)]
pub struct TruncatedGeometric {
    cdf: Vec<f64>,
}

impl TruncatedGeometric {
    pub fn with_mean(mean: f64, max: usize) -> Self {
        let weights = |p: f64| -> Vec<f64> { (0..max).map(|i| (1.0 - p).powi(i as i32) * p).collect() };
        let mean_of = |p: f64| {
            let w = weights(p);
            let total: f64 = w.iter().sum();
            w.iter().enumerate().map(|(i, x)| (i + 1) as f64 * x).sum::<f64>() / total
        };
        // mean_of falls from (max + 1) / 2 toward 1 as p goes from 0 to 1.
        let (mut lo, mut hi) = (1e-9, 1.0 - 1e-9);
        let uniform_mean = (max as f64 + 1.0) / 2.0;
        let p = if mean >= uniform_mean {
            lo
        } else {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mean_of(mid) > mean {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let w = weights(p);
        let total: f64 = w.iter().sum();
        let mut acc = 0.0;
        let cdf = w
            .iter()
            .map(|x| {
                acc += x / total;
                acc
            })
            .collect();
        TruncatedGeometric { cdf }
    }

    pub fn mean(&self) -> f64 {
        let mut prev = 0.0;
        self.cdf
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let m = (i + 1) as f64 * (c - prev);
                prev = *c;
                m
            })
            .sum()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        self.cdf.iter().position(|&c| u < c).unwrap_or(self.cdf.len() - 1) + 1
    }
}

#[derive(Debug, Clone, Default)]
pub struct Workload {
    pub entries: Vec<(ContentName, ForwardingInfo)>,
    pub queries: Vec<ContentName>,
}

fn name_of(parts: &[String]) -> ContentName {
    ContentName::from_components(parts.iter().map(String::as_str)).expect("generated components are valid")
}

/// Length offsets in `-spread..=spread`, in pairs `(d, -d)`.
fn antithetic(rng: &mut impl Rng, i: usize, prev: &mut i64, spread: i64) -> i64 {
    if i % 2 == 0 {
        *prev = rng.random_range(-spread..=spread);
        *prev
    } else {
        -*prev
    }
}

/// Deterministic in `spec`.
pub fn generate_workload(spec: &WorkloadSpec) -> Result<Workload, WorkloadError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let alphabet = spec.alphabet_size();
    let lengths = TruncatedGeometric::with_mean(spec.mean_len, spec.max_len);

    let mut seen = HashSet::with_capacity(spec.entry_count);
    let mut entries = Vec::with_capacity(spec.entry_count);
    let mut parts = Vec::with_capacity(spec.max_len);
    while entries.len() < spec.entry_count {
        let len = lengths.sample(&mut rng);
        parts.clear();
        parts.extend((0..len).map(|_| format!("c{:x}", rng.random_range(0..alphabet))));
        let name = name_of(&parts);
        if seen.insert(name.clone()) {
            let face = rng.random_range(1..=64);
            entries.push((name, ForwardingInfo::face(face)));
        }
    }
    drop(seen);

    let n = spec.query_len as i64;
    let m = spec.mean_len.round() as i64;
    let mut queries = Vec::with_capacity(spec.queries);
    let mut prev = 0;
    let mut fresh = 0u64;
    for i in 0..spec.queries {
        let hit = match spec.mode {
            QueryMode::Hit => true,
            QueryMode::Miss => false,
            QueryMode::Mixed => (i / 2) % 2 == 0,
        };
        // An odd final query takes the centre length so the mean stays exact.
        let last_unpaired = i + 1 == spec.queries && i % 2 == 0;
        if hit {
            let spread = (n - m).clamp(0, 2);
            let d = if last_unpaired { 0 } else { antithetic(&mut rng, i, &mut prev, spread) };
            let base = &entries[rng.random_range(0..entries.len())].0;
            let extra = (n - m + d).max(0) as usize;
            let mut q: Vec<String> = base.components().map(str::to_string).collect();
            for _ in 0..extra {
                q.push(format!("s{fresh:x}"));
                fresh += 1;
            }
            queries.push(name_of(&q));
        } else {
            let spread = (n - 1).clamp(0, 2);
            let d = if last_unpaired { 0 } else { antithetic(&mut rng, i, &mut prev, spread) };
            let len = (n + d) as usize;
            let mut q = Vec::with_capacity(len);
            q.push(format!("m{:x}", rng.random_range(0..alphabet)));
            q.extend((1..len).map(|_| format!("c{:x}", rng.random_range(0..alphabet))));
            queries.push(name_of(&q));
        }
    }
    Ok(Workload { entries, queries })
}

pub fn build_fib(entries: &[(ContentName, ForwardingInfo)]) -> Hpt {
    // Every stored prefix is a distinct entry, so total components bound the size.
    let mut fib = Hpt::with_capacity(entries.iter().map(|(n, _)| n.len()).sum());
    for (name, f) in entries {
        fib.insert(name, *f);
    }
    fib
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub spec: WorkloadSpec,
    pub entries: usize,
    pub fib_entries: usize,
    pub queries: usize,
    pub avg_probes_binary: f64,
    pub avg_probes_linear: f64,
    /// Linear over binary mean probes, in percent (linear = 100).
    pub throughput_ratio: f64,
    /// Same ratio from wall time.
    pub throughput_ratio_wall: f64,
    pub build_seconds: f64,
    pub binary_seconds: f64,
    pub linear_seconds: f64,
    pub hits: usize,
    /// Queries where binary search and the linear scan disagree.
    pub mismatches: usize,
    pub note: String,
}

/// Scale note attached to every benchmark report.
pub fn scale_note(spec: &WorkloadSpec) -> String {
    format!(
        "desk scale: {} entries and {} queries (published runs used 5,000,000 and 500,000); \
         probe counts are platform independent, wall times are not",
        spec.entry_count, spec.queries
    )
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

/// Runs `lookup` over `queries` on `threads` workers; returns per-query
/// probe counts and outcomes in query order.
fn run_lookups(
    fib: &Hpt,
    queries: &[ContentName],
    threads: usize,
    binary: bool,
) -> Vec<(u32, LookupOutcome)> {
    let one = |q: &ContentName| {
        let r = if binary { fib.lookup_lpm(q) } else { fib.lookup_oracle(q) };
        (r.probes, r.outcome)
    };
    if threads <= 1 {
        return queries.iter().map(one).collect();
    }
    let chunk = queries.len().div_ceil(threads).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = queries
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(one).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("lookup worker panicked")).collect()
    })
}

/// Builds the FIB, then times binary and linear lookups over the queries.
pub fn run_bench(spec: &WorkloadSpec, threads: usize) -> Result<BenchReport, WorkloadError> {
    let w = generate_workload(spec)?;
    let (fib, build) = timed(|| build_fib(&w.entries));
    let (bin, t_bin) = timed(|| run_lookups(&fib, &w.queries, threads, true));
    let (lin, t_lin) = timed(|| run_lookups(&fib, &w.queries, threads, false));
    let q = w.queries.len().max(1) as f64;
    let avg = |v: &[(u32, LookupOutcome)]| v.iter().map(|x| x.0 as f64).sum::<f64>() / q;
    let (ab, al) = (avg(&bin), avg(&lin));
    let mismatches = bin.iter().zip(&lin).filter(|(a, b)| a.1 != b.1).count();
    let hits = bin.iter().filter(|x| matches!(x.1, LookupOutcome::Hit { .. })).count();
    Ok(BenchReport {
        spec: spec.clone(),
        entries: w.entries.len(),
        fib_entries: fib.entry_count(),
        queries: w.queries.len(),
        avg_probes_binary: ab,
        avg_probes_linear: al,
        throughput_ratio: 100.0 * al / ab,
        throughput_ratio_wall: 100.0 * t_lin.as_secs_f64() / t_bin.as_secs_f64().max(1e-12),
        build_seconds: build.as_secs_f64(),
        binary_seconds: t_bin.as_secs_f64(),
        linear_seconds: t_lin.as_secs_f64(),
        hits,
        mismatches,
        note: scale_note(spec),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    pub ops: usize,
    pub inserts: usize,
    pub deletes: usize,
    pub lookups: usize,
    pub checks: usize,
    pub violations: Vec<String>,
    pub lookup_mismatches: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.lookup_mismatches == 0
    }
}

fn random_name(rng: &mut impl Rng, alphabet: usize, max_len: usize) -> ContentName {
    let len = rng.random_range(1..=max_len);
    let parts: Vec<String> = (0..len).map(|_| format!("c{:x}", rng.random_range(0..alphabet))).collect();
    name_of(&parts)
}

/// Random insert/delete sequence followed by lookups. Integrity is checked
/// every `check_every` ops and at the end; every lookup is compared with the
/// linear scan.
pub fn fib_check(ops: usize, lookups: usize, alphabet: usize, max_len: usize, check_every: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fib = Hpt::new();
    let mut live: Vec<ContentName> = Vec::new();
    let mut report = CheckReport {
        ops,
        inserts: 0,
        deletes: 0,
        lookups,
        checks: 0,
        violations: Vec::new(),
        lookup_mismatches: 0,
    };
    let check = |fib: &Hpt, at: usize, report: &mut CheckReport| {
        report.checks += 1;
        report
            .violations
            .extend(fib.verify_integrity().into_iter().map(|v| format!("after op {at}: {v:?}")));
    };
    for i in 0..ops {
        let delete = !live.is_empty() && rng.random_bool(0.4);
        if delete {
            let idx = rng.random_range(0..live.len());
            let name = live.swap_remove(idx);
            fib.delete(&name);
            report.deletes += 1;
        } else {
            let name = random_name(&mut rng, alphabet, max_len);
            if fib.forwarding_of(&name).is_none() {
                live.push(name.clone());
            }
            fib.insert(&name, ForwardingInfo::face(rng.random_range(1..=16)));
            report.inserts += 1;
        }
        if check_every > 0 && (i + 1) % check_every == 0 {
            check(&fib, i + 1, &mut report);
        }
    }
    check(&fib, ops, &mut report);
    for _ in 0..lookups {
        // Half the queries extend a live name so hits are common.
        let q = if !live.is_empty() && rng.random_bool(0.5) {
            let base = &live[rng.random_range(0..live.len())];
            base.join(&random_name(&mut rng, alphabet, 3))
        } else {
            random_name(&mut rng, alphabet, max_len)
        };
        if fib.lookup_lpm(&q).outcome != fib.lookup_oracle(&q).outcome {
            report.lookup_mismatches += 1;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_geometric_hits_its_mean() {
        for m in [1.0, 2.5, 3.0, 4.0, 5.5] {
            let g = TruncatedGeometric::with_mean(m, 10);
            assert!((g.mean() - m).abs() < 1e-6, "{m}: {}", g.mean());
        }
        let g = TruncatedGeometric::with_mean(4.0, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let s: usize = (0..n).map(|_| g.sample(&mut rng)).sum();
        assert!((s as f64 / n as f64 - 4.0).abs() < 0.03);
    }

    #[test]
    fn deterministic_and_exact_count() {
        let spec = WorkloadSpec {
            entry_count: 10_000,
            queries: 1000,
            ..WorkloadSpec::default()
        };
        let a = generate_workload(&spec).unwrap();
        let b = generate_workload(&spec).unwrap();
        assert_eq!(a.entries, b.entries);
        assert_eq!(a.queries, b.queries);
        let uniq: HashSet<_> = a.entries.iter().map(|e| &e.0).collect();
        assert_eq!(uniq.len(), 10_000);
    }

    #[test]
    fn miss_queries_have_no_stored_prefix() {
        let spec = WorkloadSpec {
            entry_count: 2000,
            queries: 2001,
            query_len: 7,
            ..WorkloadSpec::default()
        };
        let w = generate_workload(&spec).unwrap();
        let fib = build_fib(&w.entries);
        let mut total = 0;
        for q in &w.queries {
            let r = fib.lookup_oracle(q);
            assert!(!r.is_hit());
            total += r.probes;
        }
        assert_eq!(total as usize, 7 * w.queries.len());
    }

    #[test]
    fn hit_queries_match_their_base() {
        let spec = WorkloadSpec {
            entry_count: 5000,
            queries: 4000,
            mean_len: 3.0,
            query_len: 8,
            mode: QueryMode::Hit,
            ..WorkloadSpec::default()
        };
        let w = generate_workload(&spec).unwrap();
        let fib = build_fib(&w.entries);
        let total: u32 = w
            .queries
            .iter()
            .map(|q| {
                let r = fib.lookup_oracle(q);
                assert!(r.is_hit());
                r.probes
            })
            .sum();
        assert_eq!(total as f64 / w.queries.len() as f64, 6.0);
    }

    #[test]
    fn infeasible_specs() {
        let hit_short = WorkloadSpec {
            mode: QueryMode::Hit,
            mean_len: 5.0,
            query_len: 3,
            ..WorkloadSpec::default()
        };
        assert!(generate_workload(&hit_short).is_err());
        let tiny_alphabet = WorkloadSpec {
            entry_count: 1000,
            alphabet: Some(1),
            ..WorkloadSpec::default()
        };
        assert!(generate_workload(&tiny_alphabet).is_err());
    }

    #[test]
    fn check_finds_nothing_on_a_sound_table() {
        let r = fib_check(2000, 2000, 20, 6, 250, 5);
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.checks, 9);
    }
}
