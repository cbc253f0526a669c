use dsm_core::experiment::{gnuplot_script, run_points, sweep_csv, sweep_points, sweep_rows, SweepDim};
use dsm_core::{ClusterConfig, Protocol, WorkloadSpec};

fn times(dim: SweepDim, values: &[&str], cfg: &ClusterConfig, w: &WorkloadSpec) -> Vec<f64> {
    let points = sweep_points(dim, values, cfg, w).unwrap();
    let results = run_points(&points, 1).unwrap();
    assert!(results.iter().all(|r| r.verification.passed));
    results.iter().map(|r| r.completion_ps as f64).collect()
}

#[test]
fn more_replicas_never_speed_up_the_baseline() {
    let mut cfg = ClusterConfig::default();
    cfg.protocol = Protocol::Baseline;
    cfg.coalescing_enabled = false;
    let t = times(SweepDim::Nr, &["1", "2", "3", "4"], &cfg, &WorkloadSpec::write_heavy().with_ops(500));
    assert!(t.windows(2).all(|w| w[0] <= w[1]), "{t:?}");
}

#[test]
fn proactive_is_nearly_insensitive_to_replica_count() {
    let mut cfg = ClusterConfig::default();
    cfg.protocol = Protocol::Proactive;
    let t = times(SweepDim::Nr, &["1", "2", "3", "4"], &cfg, &WorkloadSpec::write_heavy().with_ops(500));
    // Replication hides behind coherence, so extra replicas cost at most noise.
    assert!(t.windows(2).all(|w| w[1] >= w[0] * 0.995), "{t:?}");
    assert!(t[3] >= t[0] * 0.995);
}

#[test]
fn more_compute_nodes_finish_a_fixed_job_sooner() {
    for protocol in [Protocol::Wb, Protocol::Proactive] {
        let mut cfg = ClusterConfig::default();
        cfg.protocol = protocol;
        let t = times(SweepDim::NumCns, &["4", "8", "16"], &cfg, &WorkloadSpec::ycsb_like().with_ops(400));
        assert!(t[0] > t[1] && t[1] > t[2], "{protocol}: {t:?}");
    }
}

#[test]
fn protocol_sweep_rows_normalize_to_the_first_point() {
    let cfg = ClusterConfig { num_cns: 8, ..ClusterConfig::default() };
    let w = WorkloadSpec::write_heavy().with_ops(300);
    let labels: Vec<&str> = vec!["WB", "WT", "BASELINE", "PARALLEL", "PROACTIVE"];
    let points = sweep_points(SweepDim::Protocol, &labels, &cfg, &w).unwrap();
    let results = run_points(&points, 2).unwrap();
    let rows = sweep_rows(&labels.iter().map(|s| s.to_string()).collect::<Vec<_>>(), &results);
    assert_eq!(rows[0].normalized, 1.0);
    assert!(rows[1].normalized > 1.0);
    assert_eq!(rows[0].replication_bytes, 0);
    assert!(rows[2..].iter().all(|r| r.replication_bytes > 0 && r.verified));
    let csv = sweep_csv(&rows);
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with("label,protocol,completion_ms,normalized"));
    assert!(gnuplot_script("sweep.csv", "protocols").contains("using 4:xtic(1)"));
}

#[test]
fn sweep_dimension_names_parse() {
    assert_eq!("nr".parse::<SweepDim>().unwrap(), SweepDim::Nr);
    assert_eq!("num-cns".parse::<SweepDim>().unwrap(), SweepDim::NumCns);
    assert!("colour".parse::<SweepDim>().is_err());
    let cfg = ClusterConfig::default();
    assert!(sweep_points(SweepDim::Nr, &["17"], &cfg, &WorkloadSpec::ycsb_like()).is_err());
}
