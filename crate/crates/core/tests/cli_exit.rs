use min_core::cli::{run_command, EXIT_FAILED, EXIT_OK, EXIT_USAGE};

fn run(out: &std::path::Path, args: &[&str]) -> i32 {
    let mut argv = vec!["minbench", "--out", out.to_str().unwrap()];
    argv.extend_from_slice(args);
    run_command(argv)
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["fib-bench", "--entries"]), EXIT_USAGE);
    assert_eq!(run(dir.path(), &["no-such-command"]), EXIT_USAGE);
    assert_eq!(run(dir.path(), &["fib-bench", "--mode", "sideways"]), EXIT_USAGE);
    assert_eq!(run(dir.path(), &["consensus-sim", "--fault", "1:explode"]), EXIT_USAGE);
}

#[test]
fn model_eval_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["model-eval", "--n", "3", "--a", "1", "--band", "125e6"]), EXIT_OK);
    let csv = std::fs::read_to_string(dir.path().join("model_eval.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let t_cons: f64 = row[5].parse().unwrap();
    assert!((t_cons - 0.13263).abs() < 5e-6);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("model_eval.json")).unwrap()).unwrap();
    assert_eq!(json["command"], "model-eval");
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"ops": 300, "lookups": 100, "check_every": 50}"#).unwrap();
    let c = cfg.to_str().unwrap();
    assert_eq!(run(dir.path(), &["--config", c, "fib-check"]), EXIT_OK);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fib_check.json")).unwrap()).unwrap();
    assert_eq!(json["summary"]["ops"], 300);
    assert_eq!(json["summary"]["checks"], 7);

    std::fs::write(&cfg, r#"{"opps": 1}"#).unwrap();
    assert_eq!(run(dir.path(), &["--config", c, "fib-check"]), EXIT_USAGE);
}

#[test]
fn small_demos_pass() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(d, &["fib-bench", "--entries", "3000", "--queries", "1000", "--len", "7"]), EXIT_OK);
    assert_eq!(run(d, &["fib-bench", "--entries", "3000", "--queries", "1000", "--mode", "hit", "--mean-len", "3", "--len", "8"]), EXIT_OK);
    assert_eq!(run(d, &["consensus-sim", "--nodes", "4", "--rounds", "5", "--k", "100", "--fault", "2:invalid-blocks"]), EXIT_OK);
    assert_eq!(run(d, &["model-sweep", "--n-max", "20"]), EXIT_OK);
    assert_eq!(run(d, &["tunnel-demo", "--bytes", "50000", "--trials", "2"]), EXIT_OK);
    assert_eq!(run(d, &["registry-demo", "--fanout", "2", "--identifiers", "60", "--unknown", "5"]), EXIT_OK);
    assert_ne!(run(d, &["model-eval", "--n", "1"]), EXIT_FAILED);
}
