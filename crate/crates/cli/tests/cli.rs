use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dsmsim(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsmsim"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("DSMSIM_SEED")
        .output()
        .expect("binary runs")
}

fn result(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("result.json")).unwrap()).unwrap()
}

const SMALL: &[&str] = &["--num_cns", "8", "--num_mns", "2", "--ops-per-core", "300"];

/// `run` with the small cluster and `extra` flags.
fn with<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["run"];
    v.extend_from_slice(SMALL);
    v.extend_from_slice(extra);
    v
}

#[test]
fn repeated_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = with(&["--preset", "ycsb-like", "--protocol", "WB", "--seed", "1"]);
    assert!(dsmsim(&args, &a).status.success());
    assert!(dsmsim(&args, &b).status.success());
    for f in ["result.json", "summary.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn write_through_is_slower_than_write_back() {
    let dir = tempfile::tempdir().unwrap();
    let mut times = Vec::new();
    for p in ["WB", "WT"] {
        let out = dir.path().join(p);
        let mut args = vec!["run", "--preset", "write-heavy", "--protocol", p];
        args.extend_from_slice(SMALL);
        assert!(dsmsim(&args, &out).status.success());
        times.push(result(&out)["completion_ps"].as_u64().unwrap());
    }
    assert!(times[1] > times[0], "{times:?}");
}

#[test]
fn crash_run_reports_the_victims_lines() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--protocol", "PROACTIVE", "--crash", "cn=0,t=5us"];
    args.extend_from_slice(SMALL);
    let o = dsmsim(&args, dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let r = result(dir.path());
    let rec = &r["recoveries"][0];
    assert_eq!(rec["victims"], serde_json::json!([0]));
    assert!(rec["owned_lines"].as_u64().unwrap() > 0);
    assert!(rec["shared_lines"].is_u64());
    assert_eq!(r["verification"]["passed"], true);
    let summary = String::from_utf8_lossy(&o.stdout);
    assert!(summary.contains("owned") && summary.contains("shared"));
}

#[test]
fn data_loss_gives_a_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    // One replica cannot survive the loss of the node that holds it.
    let args = with(&[
        "--preset",
        "write-heavy",
        "--protocol",
        "PROACTIVE",
        "--replication_factor",
        "1",
        "--crash",
        "cn=0,t=8us",
    ]);
    let o = dsmsim(&args, dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(result(dir.path())["verification"]["passed"], false);
}

#[test]
fn bad_input_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dsmsim(&["run", "--replication_factor", "17"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("replication_factor"));
    let o = dsmsim(&["run", "--preset", "nope"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_and_overrides_stack() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "num_cns = 4\nprotocol = BASELINE\n").unwrap();
    let args = [
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "num_mns=2",
        "--ops-per-core",
        "100",
        "--cores_per_cn",
        "2",
    ];
    assert!(dsmsim(&args, dir.path()).status.success());
    let c = &result(dir.path())["config"];
    assert_eq!((c["num_cns"].as_u64(), c["num_mns"].as_u64(), c["cores_per_cn"].as_u64()), (Some(4), Some(2), Some(2)));
    assert_eq!(result(dir.path())["protocol"], "BASELINE");
}

#[test]
fn sweep_writes_csv_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "sweep",
        "--preset",
        "write-heavy",
        "--dimension",
        "nr",
        "--values",
        "1,2,3",
        "--protocol",
        "BASELINE",
        "--emit-gnuplot",
    ];
    args.extend_from_slice(SMALL);
    let o = dsmsim(&args, dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][3], "1.0000");
    let t: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(t[0] <= t[1] && t[1] <= t[2], "{t:?}");
    assert!(dir.path().join("sweep.gp").exists());
}

#[test]
fn fuzz_and_trace_generation() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["fuzz-recovery", "--trials", "6", "--protocol", "PARALLEL", "--p_reorder", "0.5"];
    args.extend_from_slice(SMALL);
    let o = dsmsim(&args, dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("6 of 6 trials passed"));

    let trace = dir.path().join("w.trace");
    let o = Command::new(env!("CARGO_BIN_EXE_dsmsim"))
        .args(["gen-trace", "--preset", "sparse-sync", "--ops-per-core", "50", "--cores", "8", "-o"])
        .arg(&trace)
        .output()
        .unwrap();
    assert!(o.status.success());
    let run = dir.path().join("run");
    let args = ["run", "--trace", trace.to_str().unwrap(), "--num_cns", "4", "--cores_per_cn", "2"];
    assert!(dsmsim(&args, &run).status.success());
    assert_eq!(result(&run)["workload"], "w");
}
