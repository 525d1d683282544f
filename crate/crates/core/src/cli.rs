//! `minbench` command-line front end.
//!
//! Every subcommand writes `<name>.csv` and a `<name>.json` sidecar into
//! `--out`. `--config <file>` takes a JSON object whose keys override the
//! subcommand's flags (same names, with underscores). Exit status is 0 on
//! success, 1 when a checked property fails, 2 on usage errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::{json, Value};

use crate::model;
use crate::registry::{Registry, RegistryConfig, Response};
use crate::sim::{self, ComputeModel, FaultBehavior, FaultSpec, SimConfig, StorageMode};
use crate::tunnel::{run_scenario, Topology, TunnelConfig, TunnelMode};
use crate::workload::{self, QueryMode, WorkloadSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "minbench", version, about = "Multi-identifier network workbench")]
pub struct Cli {
    /// Directory for CSV and JSON reports.
    #[arg(long, global = true, default_value = "minbench-out")]
    pub out: PathBuf,
    /// JSON file whose keys override the subcommand flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Binary versus linear name lookup on a synthetic FIB.
    FibBench(FibBenchArgs),
    /// Random insert/delete replay with full integrity checks.
    FibCheck(FibCheckArgs),
    /// Event-driven consensus rounds in virtual time.
    ConsensusSim(ConsensusArgs),
    /// One row of the consensus timing model.
    ModelEval(ModelEvalArgs),
    /// Model grid over node count, computing power and bandwidth.
    ModelSweep(ModelSweepArgs),
    /// Byte-stream transfers through the IP/CCN tunnel.
    TunnelDemo(TunnelArgs),
    /// Registration and resolution across a domain hierarchy.
    RegistryDemo(RegistryArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FibBenchArgs {
    #[arg(long, default_value_t = 100_000)]
    pub entries: usize,
    #[arg(long, default_value_t = 50_000)]
    pub queries: usize,
    /// hit, miss or mixed.
    #[arg(long, default_value = "miss")]
    pub mode: String,
    /// Mean query length N.
    #[arg(long, default_value_t = 6)]
    pub len: usize,
    /// Mean stored-name length M.
    #[arg(long, default_value_t = 4.0)]
    pub mean_len: f64,
    /// Component pool size (defaults to the entry count).
    #[arg(long)]
    pub alphabet: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub max_len: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads for the read-only query phase.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FibCheckArgs {
    #[arg(long, default_value_t = 10_000)]
    pub ops: usize,
    #[arg(long, default_value_t = 10_000)]
    pub lookups: usize,
    #[arg(long, default_value_t = 100)]
    pub alphabet: usize,
    #[arg(long, default_value_t = 8)]
    pub max_len: usize,
    #[arg(long, default_value_t = 1000)]
    pub check_every: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusArgs {
    #[arg(long, default_value_t = 3)]
    pub nodes: u32,
    #[arg(long, default_value_t = 10)]
    pub rounds: u32,
    /// Transactions per block.
    #[arg(long, default_value_t = 10_000)]
    pub k: u32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Bytes per second per link.
    #[arg(long, default_value_t = model::PROTOTYPE_BAND)]
    pub band: f64,
    /// fitted, zero, or scaled (with --a).
    #[arg(long, default_value = "fitted")]
    pub compute: String,
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    /// pipelined or serial.
    #[arg(long, default_value = "pipelined")]
    pub storage: String,
    #[arg(long, default_value_t = 10)]
    pub term_length: u64,
    /// `node:invalid-blocks`, `node:dissent` or `node:crash@round`; repeatable.
    #[arg(long = "fault")]
    #[serde(default)]
    pub faults: Vec<String>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEvalArgs {
    #[arg(long, default_value_t = 3)]
    pub n: u32,
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    #[arg(long, default_value_t = model::PROTOTYPE_BAND)]
    pub band: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSweepArgs {
    #[arg(long, default_value_t = 3)]
    pub n_min: u32,
    #[arg(long, default_value_t = 200)]
    pub n_max: u32,
    /// Comma-separated computing-power factors.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4,8")]
    pub a: Vec<f64>,
    /// Comma-separated bandwidths in bytes per second.
    #[arg(long, value_delimiter = ',', default_value = "12.5e6,125e6,1250e6")]
    pub band: Vec<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TunnelArgs {
    /// ip-ccn-ip, ip-ccn, ccn-ip, ccn-ip-ccn or all.
    #[arg(long, default_value = "all")]
    pub mode: String,
    #[arg(long, default_value_t = 1 << 20)]
    pub bytes: usize,
    #[arg(long, default_value_t = 10)]
    pub trials: u32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Per-hop drop probability.
    #[arg(long, default_value_t = 0.0)]
    pub loss: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryArgs {
    /// Children per domain below the top (two more levels).
    #[arg(long, default_value_t = 3)]
    pub fanout: usize,
    #[arg(long, default_value_t = 1000)]
    pub identifiers: usize,
    /// Unregistered identifiers to query.
    #[arg(long, default_value_t = 50)]
    pub unknown: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Failed(String),
    Io(std::io::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// exit status.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Failed(m)) => {
            eprintln!("FAILED: {m}");
            EXIT_FAILED
        }
        Err(CliError::Io(e)) => {
            eprintln!("error: {e}");
            EXIT_FAILED
        }
    }
}

/// Overlays the `--config` object on parsed flags.
fn merged<A: Serialize + DeserializeOwned>(args: &A, config: Option<&Path>) -> Result<A, CliError> {
    let Some(path) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(args).unwrap()).unwrap());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let overlay: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let Value::Object(overlay) = overlay else {
        return Err(CliError::Usage("--config must hold a JSON object".into()));
    };
    let mut base = serde_json::to_value(args).unwrap();
    let obj = base.as_object_mut().unwrap();
    for (k, v) in overlay {
        obj.insert(k, v);
    }
    serde_json::from_value(base).map_err(|e| CliError::Usage(format!("--config: {e}")))
}

struct Output<'a> {
    dir: &'a Path,
    name: &'static str,
}

impl Output<'_> {
    fn csv_path(&self) -> PathBuf {
        self.dir.join(format!("{}.csv", self.name))
    }

    fn csv<S: Serialize>(&self, rows: &[S]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(self.csv_path())?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    fn json(&self, args: &impl Serialize, summary: Value, note: &str) -> Result<(), CliError> {
        let doc = json!({
            "command": self.name.replace('_', "-"),
            "args": args,
            "summary": summary,
            "note": note,
        });
        let path = self.dir.join(format!("{}.json", self.name));
        fs::write(path, serde_json::to_string_pretty(&doc).unwrap() + "\n")?;
        Ok(())
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    fs::create_dir_all(&cli.out)?;
    let cfg = cli.config.as_deref();
    match &cli.command {
        Command::FibBench(a) => fib_bench(&merged(a, cfg)?, &cli.out),
        Command::FibCheck(a) => fib_check(&merged(a, cfg)?, &cli.out),
        Command::ConsensusSim(a) => consensus_sim(&merged(a, cfg)?, &cli.out),
        Command::ModelEval(a) => model_eval(&merged(a, cfg)?, &cli.out),
        Command::ModelSweep(a) => model_sweep(&merged(a, cfg)?, &cli.out),
        Command::TunnelDemo(a) => tunnel_demo(&merged(a, cfg)?, &cli.out),
        Command::RegistryDemo(a) => registry_demo(&merged(a, cfg)?, &cli.out),
    }
}

#[derive(Serialize)]
struct FibBenchRow {
    mode: String,
    entries: usize,
    queries: usize,
    m: f64,
    n: usize,
    avg_probes_linear: f64,
    avg_probes_binary: f64,
    throughput_ratio: f64,
    throughput_ratio_wall: f64,
    build_seconds: f64,
    hits: usize,
    mismatches: usize,
}

fn fib_bench(a: &FibBenchArgs, out: &Path) -> Result<(), CliError> {
    let mode: QueryMode = a.mode.parse().map_err(CliError::Usage)?;
    let spec = WorkloadSpec {
        entry_count: a.entries,
        queries: a.queries,
        mean_len: a.mean_len,
        query_len: a.len,
        mode,
        alphabet: a.alphabet,
        max_len: a.max_len,
        seed: a.seed,
    };
    let r = workload::run_bench(&spec, a.threads).map_err(|e| CliError::Usage(e.to_string()))?;
    println!(
        "N={} M={} {}: linear {:.2} probes, binary {:.2} probes, throughput {:.0}% (wall {:.0}%), {} hits",
        a.len, a.mean_len, a.mode, r.avg_probes_linear, r.avg_probes_binary, r.throughput_ratio, r.throughput_ratio_wall, r.hits
    );
    println!("{}", r.note);
    let o = Output { dir: out, name: "fib_bench" };
    o.csv(&[FibBenchRow {
        mode: a.mode.clone(),
        entries: r.entries,
        queries: r.queries,
        m: a.mean_len,
        n: a.len,
        avg_probes_linear: r.avg_probes_linear,
        avg_probes_binary: r.avg_probes_binary,
        throughput_ratio: r.throughput_ratio,
        throughput_ratio_wall: r.throughput_ratio_wall,
        build_seconds: r.build_seconds,
        hits: r.hits,
        mismatches: r.mismatches,
    }])?;
    o.json(a, serde_json::to_value(&r).unwrap(), &r.note)?;
    if r.mismatches > 0 {
        return Err(CliError::Failed(format!("{} lookups disagree with the linear scan", r.mismatches)));
    }
    if mode == QueryMode::Miss && r.avg_probes_linear != a.len as f64 {
        return Err(CliError::Failed(format!(
            "linear scan averaged {} probes on all-miss queries, expected {}",
            r.avg_probes_linear, a.len
        )));
    }
    Ok(())
}

fn fib_check(a: &FibCheckArgs, out: &Path) -> Result<(), CliError> {
    if a.alphabet == 0 || a.max_len == 0 {
        return Err(CliError::Usage("alphabet and max-len must be positive".into()));
    }
    let r = workload::fib_check(a.ops, a.lookups, a.alphabet, a.max_len, a.check_every, a.seed);
    println!(
        "{} ops ({} inserts, {} deletes), {} integrity checks, {} violations, {} lookup mismatches",
        r.ops,
        r.inserts,
        r.deletes,
        r.checks,
        r.violations.len(),
        r.lookup_mismatches
    );
    let o = Output { dir: out, name: "fib_check" };
    o.csv(&[FibCheckRow {
        ops: r.ops,
        inserts: r.inserts,
        deletes: r.deletes,
        lookups: r.lookups,
        checks: r.checks,
        violations: r.violations.len(),
        lookup_mismatches: r.lookup_mismatches,
    }])?;
    o.json(a, serde_json::to_value(&r).unwrap(), "integrity replay")?;
    if r.passed() {
        Ok(())
    } else {
        for v in r.violations.iter().take(10) {
            eprintln!("  {v}");
        }
        Err(CliError::Failed("integrity violations found".into()))
    }
}

#[derive(Serialize)]
struct FibCheckRow {
    ops: usize,
    inserts: usize,
    deletes: usize,
    lookups: usize,
    checks: usize,
    violations: usize,
    lookup_mismatches: usize,
}

fn parse_fault(s: &str) -> Result<FaultSpec, String> {
    let (node, what) = s.split_once(':').ok_or_else(|| format!("fault {s:?} needs node:behavior"))?;
    let node = node.parse().map_err(|_| format!("bad node id in {s:?}"))?;
    let behavior = match what {
        "invalid-blocks" => FaultBehavior::InvalidBlocks,
        "dissent" => FaultBehavior::DissentingVotes,
        w => match w.strip_prefix("crash@") {
            Some(r) => FaultBehavior::CrashAtRound(r.parse().map_err(|_| format!("bad round in {s:?}"))?),
            None => return Err(format!("unknown fault behavior {w:?}")),
        },
    };
    Ok(FaultSpec { node, behavior })
}

fn consensus_sim(a: &ConsensusArgs, out: &Path) -> Result<(), CliError> {
    let compute = match a.compute.as_str() {
        "fitted" => ComputeModel::Fitted,
        "zero" => ComputeModel::Zero,
        "scaled" => ComputeModel::Scaled { a: a.a },
        c => return Err(CliError::Usage(format!("unknown compute model {c:?}"))),
    };
    let storage = match a.storage.as_str() {
        "pipelined" => StorageMode::Pipelined,
        "serial" => StorageMode::Serial,
        s => return Err(CliError::Usage(format!("unknown storage mode {s:?}"))),
    };
    let mut cfg = SimConfig {
        nodes: a.nodes,
        rounds: a.rounds,
        k: a.k,
        seed: a.seed,
        band: a.band,
        compute,
        storage,
        term_length: a.term_length,
        ..SimConfig::default()
    };
    for f in &a.faults {
        let spec = parse_fault(f).map_err(CliError::Usage)?;
        cfg = sim::inject_fault(&cfg, spec).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let report = sim::run_rounds(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    let s = &report.summary;
    println!(
        "{} nodes, {} rounds: mean round {:.4} s, {:.0} tx/s, {} committed",
        s.nodes, s.rounds_completed, s.mean_round_time, s.throughput, s.committed_txs
    );
    if let Some(st) = &s.stall {
        println!("stalled in round {}: {}", st.round, st.reason);
    }
    let o = Output { dir: out, name: "consensus_sim" };
    report.write_csv(fs::File::create(o.csv_path())?)?;
    o.json(a, serde_json::to_value(&report.summary).unwrap(), "virtual time")?;
    if s.divergent_rounds > 0 {
        return Err(CliError::Failed(format!("{} rounds with divergent chains", s.divergent_rounds)));
    }
    Ok(())
}

fn model_eval(a: &ModelEvalArgs, out: &Path) -> Result<(), CliError> {
    if a.n < 2 || !(a.a > 0.0) || !(a.band > 0.0) {
        return Err(CliError::Usage("need n >= 2 and positive a and band".into()));
    }
    let row = model::evaluate(a.n, a.a, a.band);
    println!(
        "n={} a={} band={}: t_tran {:.5} s, t_comp {:.5} s, t_cons {:.5} s, limit {:.0} tx/s",
        row.n, row.a, row.band, row.t_tran, row.t_comp, row.t_cons, row.throughput
    );
    let p = model::ModelParams::prototype(a.n).with_band(a.band);
    let coeff = model::coefficient_report(&p);
    let o = Output { dir: out, name: "model_eval" };
    model::write_rows(fs::File::create(o.csv_path())?, &[row])?;
    o.json(
        a,
        json!({
            "row": row,
            "breakdown": model::breakdown(&p),
            "fit_at_n": model::consensus_time_fit(a.n),
            "transmission_coefficients": coeff,
        }),
        "closed-form model",
    )?;
    Ok(())
}

fn model_sweep(a: &ModelSweepArgs, out: &Path) -> Result<(), CliError> {
    if a.n_min < 2 || a.n_max < a.n_min || a.a.is_empty() || a.band.is_empty() {
        return Err(CliError::Usage("need 2 <= n-min <= n-max and non-empty a and band lists".into()));
    }
    if a.a.iter().chain(&a.band).any(|x| !(*x > 0.0)) {
        return Err(CliError::Usage("a and band values must be positive".into()));
    }
    let ns: Vec<u32> = (a.n_min..=a.n_max).collect();
    let rows = model::sweep_grid(&ns, &a.a, &a.band);
    let mut sorted_a = a.a.clone();
    sorted_a.sort_by(f64::total_cmp);
    let mut sorted_b = a.band.clone();
    sorted_b.sort_by(f64::total_cmp);
    let mut violations = 0usize;
    for &n in &ns {
        for w in sorted_a.windows(2) {
            for &b in &sorted_b {
                if model::throughput_limit(n, w[1], b) < model::throughput_limit(n, w[0], b) {
                    violations += 1;
                }
            }
        }
        for w in sorted_b.windows(2) {
            for &x in &sorted_a {
                if model::throughput_limit(n, x, w[1]) < model::throughput_limit(n, x, w[0]) {
                    violations += 1;
                }
            }
        }
    }
    let best = rows.iter().max_by(|x, y| x.throughput.total_cmp(&y.throughput)).unwrap();
    println!(
        "{} rows; peak limit {:.0} tx/s at n={} a={} band={}; {} monotonicity violations",
        rows.len(),
        best.throughput,
        best.n,
        best.a,
        best.band,
        violations
    );
    let o = Output { dir: out, name: "model_sweep" };
    model::write_rows(fs::File::create(o.csv_path())?, &rows)?;
    o.json(
        a,
        json!({ "rows": rows.len(), "peak": best, "monotonicity_violations": violations }),
        "closed-form model",
    )?;
    if violations > 0 {
        return Err(CliError::Failed(format!("{violations} monotonicity violations")));
    }
    Ok(())
}

#[derive(Serialize)]
struct TunnelRow {
    mode: &'static str,
    trial: u32,
    bytes_sent: u64,
    bytes_delivered: u64,
    digest_match: bool,
    establish_exchanges: usize,
    terminate_exchanges: usize,
    interests_total: u64,
    retransmissions: u64,
}

fn tunnel_demo(a: &TunnelArgs, out: &Path) -> Result<(), CliError> {
    let modes: Vec<TunnelMode> = if a.mode == "all" {
        TunnelMode::ALL.to_vec()
    } else {
        vec![a.mode.parse().map_err(CliError::Usage)?]
    };
    if !(0.0..1.0).contains(&a.loss) {
        return Err(CliError::Usage("loss must be in [0, 1)".into()));
    }
    let mut rows = Vec::new();
    let mut failures = 0;
    for mode in modes {
        for trial in 0..a.trials {
            let seed = a.seed.wrapping_mul(1_000_003).wrapping_add(trial as u64);
            let payload = random_bytes(a.bytes, seed);
            let cfg = TunnelConfig {
                seed,
                loss: a.loss,
                max_retries: if a.loss > 0.0 { 64 } else { 8 },
                ..TunnelConfig::default()
            };
            match run_scenario(mode, &payload, Topology::for_mode(mode), cfg) {
                Ok(r) => {
                    let ok = r.intact() && (a.loss > 0.0 || (r.establish_exchanges, r.terminate_exchanges) == (3, 4));
                    failures += usize::from(!ok);
                    rows.push(TunnelRow {
                        mode: mode.as_str(),
                        trial,
                        bytes_sent: r.bytes_sent,
                        bytes_delivered: r.bytes_delivered,
                        digest_match: r.sent_digest == r.digest,
                        establish_exchanges: r.establish_exchanges,
                        terminate_exchanges: r.terminate_exchanges,
                        interests_total: r.interests_total,
                        retransmissions: r.counters.retransmissions,
                    });
                }
                Err(e) => {
                    failures += 1;
                    eprintln!("{} trial {trial}: {e}", mode.as_str());
                }
            }
        }
    }
    println!("{} transfers of {} bytes, {} failures", rows.len(), a.bytes, failures);
    let o = Output { dir: out, name: "tunnel_demo" };
    o.csv(&rows)?;
    o.json(
        a,
        json!({ "transfers": rows.len(), "failures": failures }),
        "simulated fabric; link rates are not modeled",
    )?;
    if failures > 0 {
        return Err(CliError::Failed(format!("{failures} transfers failed")));
    }
    Ok(())
}

fn random_bytes(n: usize, seed: u64) -> Vec<u8> {
    use rand::{RngCore, SeedableRng};
    let mut v = vec![0u8; n];
    rand_chacha::ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut v);
    v
}

#[derive(Serialize)]
struct RegistryRow {
    domain: String,
    height: u64,
    records: usize,
}

fn registry_demo(a: &RegistryArgs, out: &Path) -> Result<(), CliError> {
    use rand::{Rng, SeedableRng};
    if a.fanout == 0 {
        return Err(CliError::Usage("fanout must be positive".into()));
    }
    let cfg = RegistryConfig {
        seed: a.seed,
        store_dir: Some(out.join("registry_store")),
        ..RegistryConfig::default()
    };
    if let Some(dir) = &cfg.store_dir {
        let _ = fs::remove_dir_all(dir);
    }
    let mut reg = Registry::three_level(a.fanout, cfg).map_err(|e| CliError::Failed(e.to_string()))?;
    let names: Vec<String> = reg.domains().iter().map(|d| d.name.to_string()).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
    let mut ids = Vec::with_capacity(a.identifiers);
    let mut failures = Vec::new();
    for i in 0..a.identifiers {
        let home = &names[rng.random_range(0..names.len())];
        let id = match i % 4 {
            0 | 1 => format!("content:{home}/obj{i}"),
            2 => format!("content:/pub/item{i}"),
            _ => format!("id:user{i}"),
        };
        let msg = json!({
            "op": "register", "domain": home, "identifier": id,
            "owner": format!("id:owner{}", i % 17),
            "forwarding": { "face_id": 1 + (i % 32) as u32, "metric": null },
        });
        match serde_json::from_str::<Response>(&reg.handle_json(&msg.to_string())).unwrap() {
            Response::Registered { .. } => ids.push(id),
            other => failures.push(format!("register {id}: {other:?}")),
        }
    }
    // Duplicates go to a different domain than the original.
    let mut duplicates_rejected = 0;
    for id in ids.iter().take(20) {
        let msg = json!({
            "op": "register", "domain": names[rng.random_range(0..names.len())], "identifier": id,
            "owner": "id:intruder", "forwarding": { "face_id": 9, "metric": null },
        });
        match serde_json::from_str::<Response>(&reg.handle_json(&msg.to_string())).unwrap() {
            Response::Error { kind, .. } if kind == "duplicate" => duplicates_rejected += 1,
            other => failures.push(format!("duplicate {id} accepted: {other:?}")),
        }
    }
    let mut resolved = 0usize;
    for name in &names {
        for id in &ids {
            let msg = json!({ "op": "resolve", "origin": name, "identifier": id });
            match serde_json::from_str::<Response>(&reg.handle_json(&msg.to_string())).unwrap() {
                Response::Resolution(r) if r.is_resolved() => resolved += 1,
                other => failures.push(format!("resolve {id} from {name}: {other:?}")),
            }
        }
    }
    let mut not_found = 0;
    for i in 0..a.unknown {
        let id = format!("content:/nowhere/x{i}");
        let msg = json!({ "op": "resolve", "origin": names[i % names.len()], "identifier": id });
        match serde_json::from_str::<Response>(&reg.handle_json(&msg.to_string())).unwrap() {
            Response::Resolution(r) if !r.is_resolved() && !r.hops.is_empty() => not_found += 1,
            other => failures.push(format!("unknown {id}: {other:?}")),
        }
    }
    let audit = reg.audit();
    failures.extend(audit.iter().map(|x| format!("audit: {x:?}")));
    println!(
        "{} domains, {} registered, {} resolutions ok, {} duplicates rejected, {} not-found, {} failures",
        names.len(),
        ids.len(),
        resolved,
        duplicates_rejected,
        not_found,
        failures.len()
    );
    let o = Output { dir: out, name: "registry_demo" };
    let rows: Vec<RegistryRow> = reg
        .domains()
        .iter()
        .map(|d| RegistryRow {
            domain: d.name.to_string(),
            height: d.chain().height(),
            records: d.records().len(),
        })
        .collect();
    o.csv(&rows)?;
    o.json(
        a,
        json!({
            "domains": names.len(), "registered": ids.len(), "resolutions_ok": resolved,
            "duplicates_rejected": duplicates_rejected, "not_found": not_found,
            "failures": failures.iter().take(20).collect::<Vec<_>>(),
        }),
        "in-process hierarchy; request and response messages are JSON",
    )?;
    if !failures.is_empty() {
        for f in failures.iter().take(10) {
            eprintln!("  {f}");
        }
        return Err(CliError::Failed(format!("{} registry checks failed", failures.len())));
    }
    Ok(())
}
