//! Convenience drivers: single runs, protocol sweeps and crash fuzzing.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ClusterConfig, Protocol};
use crate::engine::{streams, SeededRng, SimTime};
use crate::error::SimError;
use crate::metrics::RunResult;
use crate::recovery::{CrashPlan, CrashTrigger};
use crate::sim::{SimOptions, Simulation};
use crate::trace::Trace;
use crate::workload::{generate_trace, WorkloadSpec};

pub fn run_trace(
    cfg: &ClusterConfig,
    trace: Arc<Trace>,
    name: &str,
    seed: u64,
    crashes: Vec<CrashPlan>,
) -> Result<RunResult, SimError> {
    let mut sim = Simulation::new(cfg.clone(), trace, SimOptions { seed, crashes, ..Default::default() })?;
    sim.run()?;
    Ok(RunResult::collect(&sim, name, seed))
}

pub fn run(
    cfg: &ClusterConfig,
    workload: &WorkloadSpec,
    seed: u64,
    crashes: Vec<CrashPlan>,
) -> Result<RunResult, SimError> {
    let trace = generate_trace(workload, cfg.total_cores(), seed)?;
    run_trace(cfg, Arc::new(trace), &workload.name, seed, crashes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepDim {
    Protocol,
    Nr,
    /// Strong scaling: the total op count of the base cluster is split over the new core count.
    NumCns,
    LinkGbps,
    Coalescing,
}

impl std::str::FromStr for SweepDim {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "protocol" => Ok(SweepDim::Protocol),
            "nr" | "replication_factor" => Ok(SweepDim::Nr),
            "num_cns" | "cns" => Ok(SweepDim::NumCns),
            "link_gbps" | "link" => Ok(SweepDim::LinkGbps),
            "coalescing" | "coalescing_enabled" => Ok(SweepDim::Coalescing),
            other => Err(format!("unknown sweep dimension `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub label: String,
    pub cfg: ClusterConfig,
    pub workload: WorkloadSpec,
}

/// Expands a sweep over one dimension into concrete runs.
pub fn sweep_points(
    dim: SweepDim,
    values: &[&str],
    base: &ClusterConfig,
    workload: &WorkloadSpec,
) -> Result<Vec<SweepPoint>, String> {
    let mut out = Vec::new();
    for &v in values {
        let mut cfg = base.clone();
        let mut w = workload.clone();
        match dim {
            SweepDim::Protocol => cfg.protocol = v.parse()?,
            SweepDim::Nr => cfg.replication_factor = v.parse().map_err(|_| format!("bad Nr `{v}`"))?,
            SweepDim::NumCns => {
                let n: usize = v.parse().map_err(|_| format!("bad CN count `{v}`"))?;
                let total = workload.ops_per_core * base.total_cores();
                cfg.num_cns = n;
                w.ops_per_core = (total / (n * base.cores_per_cn).max(1)).max(1);
            }
            SweepDim::LinkGbps => cfg.link_gbps = v.parse().map_err(|_| format!("bad bandwidth `{v}`"))?,
            SweepDim::Coalescing => {
                cfg.coalescing_enabled = matches!(v.to_ascii_lowercase().as_str(), "on" | "true" | "1" | "yes")
            }
        }
        cfg.validate().map_err(|e| e.to_string())?;
        out.push(SweepPoint { label: v.to_string(), cfg, workload: w });
    }
    Ok(out)
}

/// Runs every point with the same seed. Points sharing a core count and workload share a trace.
pub fn run_points(points: &[SweepPoint], seed: u64) -> Result<Vec<RunResult>, SimError> {
    points
        .par_iter()
        .map(|p| {
            let trace = generate_trace(&p.workload, p.cfg.total_cores(), seed)?;
            run_trace(&p.cfg, Arc::new(trace), &p.workload.name, seed, Vec::new())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub protocol: Protocol,
    pub completion_ms: f64,
    /// Completion time relative to the first point of the sweep.
    pub normalized: f64,
    pub coherence_bytes: u64,
    pub replication_bytes: u64,
    pub logdump_bytes: u64,
    pub repl_at_head_fraction: f64,
    pub max_dram_log_bytes: u64,
    pub verified: bool,
}

/// Runs one trace under each protocol.
pub fn sweep(
    cfg: &ClusterConfig,
    workload: &WorkloadSpec,
    protocols: &[Protocol],
    seed: u64,
) -> Result<Vec<RunResult>, SimError> {
    let trace = Arc::new(generate_trace(workload, cfg.total_cores(), seed)?);
    protocols
        .par_iter()
        .map(|&p| {
            let mut c = cfg.clone();
            c.protocol = p;
            run_trace(&c, trace.clone(), &workload.name, seed, Vec::new())
        })
        .collect()
}

pub fn sweep_rows(labels: &[String], results: &[RunResult]) -> Vec<SweepRow> {
    let reference = results.first().map_or(1.0, |r| r.completion_ms().max(f64::MIN_POSITIVE));
    labels
        .iter()
        .zip(results)
        .map(|(label, r)| SweepRow {
            label: label.clone(),
            protocol: r.protocol,
            completion_ms: r.completion_ms(),
            normalized: r.completion_ms() / reference,
            coherence_bytes: r.bytes.coherence_bytes,
            replication_bytes: r.bytes.replication_bytes,
            logdump_bytes: r.bytes.logdump_bytes,
            repl_at_head_fraction: r.repl_at_head_fraction,
            max_dram_log_bytes: r.max_dram_log_bytes,
            verified: r.verification.passed,
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(
        "label,protocol,completion_ms,normalized,coherence_bytes,replication_bytes,logdump_bytes,repl_at_head_fraction,max_dram_log_bytes,verified\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.4},{},{},{},{:.4},{},{}",
            r.label,
            r.protocol,
            r.completion_ms,
            r.normalized,
            r.coherence_bytes,
            r.replication_bytes,
            r.logdump_bytes,
            r.repl_at_head_fraction,
            r.max_dram_log_bytes,
            r.verified
        );
    }
    s
}

/// Gnuplot script drawing normalized completion time per protocol from `csv_path`.
pub fn gnuplot_script(csv_path: &str, title: &str) -> String {
    format!(
        "set datafile separator ','\nset title '{title}'\nset style data histograms\nset style fill solid 0.8\n\
         set ylabel 'completion time (normalized)'\nset key off\nplot '{csv_path}' using 4:xtic(1) skip 1\n"
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuzzTrial {
    pub trial: u64,
    pub crashes: Vec<CrashPlan>,
    pub passed: bool,
    pub error: Option<String>,
    pub recoveries: usize,
    pub owned_lines: u64,
    pub mismatches: u64,
    pub ts_inversions: u64,
    pub gate_violations: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub trials: Vec<FuzzTrial>,
    pub passed: u64,
    pub failed: u64,
    /// Crash-free completion time used to place crashes.
    pub reference_completion_ps: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FuzzOptions {
    pub trials: u64,
    pub seed: u64,
    /// Probability that a trial crashes two CNs at the same instant.
    pub p_simultaneous: f64,
    /// Probability that a trial has a second, later crash.
    pub p_sequential: f64,
}

impl Default for FuzzOptions {
    fn default() -> Self {
        Self { trials: 20, seed: 1, p_simultaneous: 0.2, p_sequential: 0.2 }
    }
}

fn plan_crashes(cfg: &ClusterConfig, opts: &FuzzOptions, trial: u64, horizon: SimTime) -> Vec<CrashPlan> {
    let mut rng = SeededRng::stream(opts.seed ^ trial.wrapping_mul(0x9e37_79b9_7f4a_7c15), streams::CRASH);
    let n = cfg.num_cns as u16;
    let lo = horizon.ps() / 20;
    let hi = (horizon.ps() * 9 / 10).max(lo + 1);
    let t = rng.random_range(lo..hi);
    let first = rng.random_range(0..n);
    let mut victims = vec![first];
    // Keep at least Nr + 1 CNs alive.
    let max_victims = cfg.num_cns.saturating_sub(cfg.replication_factor + 1);
    if max_victims >= 2 && rng.random_bool(opts.p_simultaneous) {
        let second = (first + rng.random_range(1..n)) % n;
        victims.push(second);
    }
    let mut plans = vec![CrashPlan { victims: victims.clone(), trigger: CrashTrigger::At(SimTime::from_ps(t)) }];
    if victims.len() < max_victims && rng.random_bool(opts.p_sequential) {
        // Far enough apart that the first recovery is over.
        let gap = SimTime::from_ns(cfg.detect_timeout_ns * 20).ps();
        let t2 = t + gap + rng.random_range(0..gap);
        let mut v = rng.random_range(0..n);
        while victims.contains(&v) {
            v = (v + 1) % n;
        }
        plans.push(CrashPlan { victims: vec![v], trigger: CrashTrigger::At(SimTime::from_ps(t2)) });
    }
    plans
}

/// Injects random crashes into repeated runs of one trace and checks every recovery.
pub fn fuzz_recovery(cfg: &ClusterConfig, workload: &WorkloadSpec, opts: FuzzOptions) -> Result<FuzzReport, SimError> {
    let trace = Arc::new(generate_trace(workload, cfg.total_cores(), opts.seed)?);
    let reference = run_trace(cfg, trace.clone(), &workload.name, opts.seed, Vec::new())?;
    let horizon = SimTime::from_ps(reference.completion_ps);
    let trials: Vec<FuzzTrial> = (0..opts.trials)
        .into_par_iter()
        .map(|trial| {
            let crashes = plan_crashes(cfg, &opts, trial, horizon);
            match run_trace(cfg, trace.clone(), &workload.name, opts.seed.wrapping_add(trial), crashes.clone()) {
                Ok(r) => FuzzTrial {
                    trial,
                    passed: r.verification.passed && r.recoveries.iter().all(|x| x.repair_mismatches == 0),
                    error: None,
                    recoveries: r.recoveries.len(),
                    owned_lines: r.recoveries.iter().map(|x| x.owned_lines).sum(),
                    mismatches: r.verification.mismatches,
                    ts_inversions: r.ts_inversions,
                    gate_violations: r.stats.gate_violations,
                    crashes,
                },
                Err(e) => FuzzTrial {
                    trial,
                    crashes,
                    passed: false,
                    error: Some(e.to_string()),
                    recoveries: 0,
                    owned_lines: 0,
                    mismatches: 0,
                    ts_inversions: 0,
                    gate_violations: 0,
                },
            }
        })
        .collect();
    let passed = trials.iter().filter(|t| t.passed).count() as u64;
    Ok(FuzzReport {
        failed: trials.len() as u64 - passed,
        passed,
        trials,
        reference_completion_ps: reference.completion_ps,
    })
}
