//! Drives the `minbench` command line in-process with a JSON config overlay
//! and prints the resulting sidecar.

use min_core::cli::run_command;

fn main() {
    let dir = std::env::temp_dir().join("minbench-example");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("bench.json");
    std::fs::write(&cfg, r#"{"entries": 20000, "queries": 5000, "mode": "hit", "mean_len": 3.0, "len": 8}"#).unwrap();
    let code = run_command([
        "minbench",
        "--out",
        dir.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "fib-bench",
    ]);
    println!("exit {code}");
    println!("{}", std::fs::read_to_string(dir.join("fib_bench.json")).unwrap());
}
