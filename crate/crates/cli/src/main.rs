//! `dsmsim`: run, sweep and crash-fuzz the disaggregated-memory simulator.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Arg, ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand};

use dsm_core::config::{parse_config, CONFIG_KEYS};
use dsm_core::experiment::{
    fuzz_recovery, gnuplot_script, run_points, sweep_csv, sweep_points, sweep_rows, FuzzOptions, SweepDim,
};
use dsm_core::trace::load_trace;
use dsm_core::{generate_trace, run_trace, ClusterConfig, CrashPlan, RunResult, Trace, WorkloadSpec};

#[derive(Parser)]
#[command(name = "dsmsim", version, about = "Discrete-event simulator for replicated disaggregated memory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation and write result.json and summary.txt.
    Run(RunArgs),
    /// Vary one parameter and compare completion times.
    Sweep(SweepArgs),
    /// Inject random crashes into repeated runs and check every recovery.
    FuzzRecovery(FuzzArgs),
    /// Write a synthetic trace file.
    GenTrace(GenArgs),
}

/// Every cluster configuration key as a `--key value` flag.
#[derive(Clone, Debug, Default)]
struct ConfigFlags(Vec<(&'static str, String)>);

impl FromArgMatches for ConfigFlags {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        Ok(Self(CONFIG_KEYS.iter().filter_map(|&k| m.get_one::<String>(k).map(|v| (k, v.clone()))).collect()))
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl Args for ConfigFlags {
    fn augment_args(cmd: Command) -> Command {
        CONFIG_KEYS
            .iter()
            .fold(cmd, |cmd, &k| cmd.arg(Arg::new(k).long(k).value_name("VALUE").help_heading("Cluster configuration")))
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable. Applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(flatten)]
    flags: ConfigFlags,
    #[arg(long, env = "DSMSIM_SEED", default_value_t = 1)]
    seed: u64,
}

impl ConfigArgs {
    fn build(&self) -> Result<ClusterConfig> {
        let mut cfg = match &self.config {
            Some(p) => parse_config(p).with_context(|| format!("reading {}", p.display()))?,
            None => ClusterConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        for (k, v) in &self.flags.0 {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct WorkloadArgs {
    /// Synthetic workload preset.
    #[arg(long, default_value = "ycsb-like", conflicts_with = "trace")]
    preset: String,
    /// Replay a trace file instead of generating one.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Override the preset's per-core op count.
    #[arg(long)]
    ops_per_core: Option<usize>,
}

impl WorkloadArgs {
    fn spec(&self) -> Result<WorkloadSpec> {
        let Some(mut w) = WorkloadSpec::preset(&self.preset) else {
            bail!("unknown preset `{}` (known: {})", self.preset, dsm_core::workload::PRESETS.join(", "));
        };
        if let Some(n) = self.ops_per_core {
            w = w.with_ops(n);
        }
        Ok(w)
    }

    /// The trace to run and the name it is reported under.
    fn load(&self, cfg: &ClusterConfig, seed: u64) -> Result<(Arc<Trace>, String)> {
        if let Some(p) = &self.trace {
            let t = load_trace(p).with_context(|| format!("loading {}", p.display()))?;
            let name = p.file_stem().map_or("trace".into(), |s| s.to_string_lossy().into_owned());
            return Ok((Arc::new(t), name));
        }
        let w = self.spec()?;
        Ok((Arc::new(generate_trace(&w, cfg.total_cores(), seed)?), w.name))
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    workload: WorkloadArgs,
    /// Crash spec such as `cn=0,t=12.5ms`, `cn=2+5,t=40us` or `cn=1,after=500`; repeatable.
    #[arg(long)]
    crash: Vec<CrashPlan>,
    /// Directory for result.json and summary.txt.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    workload: WorkloadArgs,
    /// protocol, nr, num_cns, link_GBps or coalescing.
    #[arg(long)]
    dimension: SweepDim,
    /// Comma-separated values; the first is the normalization reference.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write a gnuplot script plotting the CSV.
    #[arg(long)]
    emit_gnuplot: bool,
}

#[derive(Args)]
struct FuzzArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    workload: WorkloadArgs,
    #[arg(long, default_value_t = 20)]
    trials: u64,
    /// Probability that a trial crashes two CNs at once.
    #[arg(long, default_value_t = 0.2)]
    p_simultaneous: f64,
    /// Probability that a trial adds a later, second crash.
    #[arg(long, default_value_t = 0.2)]
    p_sequential: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    workload: WorkloadArgs,
    /// Core count; defaults to the configured cluster's.
    #[arg(long)]
    cores: Option<usize>,
    #[arg(long, short)]
    output: PathBuf,
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let p = dir.join(name);
    fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
}

fn cmd_run(a: RunArgs) -> Result<bool> {
    let cfg = a.config.build()?;
    let (trace, name) = a.workload.load(&cfg, a.config.seed)?;
    let r = run_trace(&cfg, trace, &name, a.config.seed, a.crash)?;
    write(&a.out, "result.json", &r.to_json())?;
    let summary = r.summary();
    write(&a.out, "summary.txt", &summary)?;
    print!("{summary}");
    Ok(r.verification.passed)
}

fn cmd_sweep(a: SweepArgs) -> Result<bool> {
    if a.workload.trace.is_some() {
        bail!("sweeps generate their traces from a preset; --trace is not supported");
    }
    let cfg = a.config.build()?;
    let w = a.workload.spec()?;
    let values: Vec<&str> = a.values.iter().map(String::as_str).collect();
    let points = sweep_points(a.dimension, &values, &cfg, &w).map_err(anyhow::Error::msg)?;
    let results: Vec<RunResult> = run_points(&points, a.config.seed)?;
    let labels: Vec<String> = points.iter().map(|p| p.label.clone()).collect();
    let rows = sweep_rows(&labels, &results);
    let csv = sweep_csv(&rows);
    write(&a.out, "sweep.csv", &csv)?;
    write(&a.out, "sweep.json", &serde_json::to_string_pretty(&results)?)?;
    if a.emit_gnuplot {
        let title = format!("{} sweep, {}", values.join("/"), w.name);
        write(&a.out, "sweep.gp", &gnuplot_script("sweep.csv", &title))?;
    }
    println!("{:<12} {:<10} {:>14} {:>10} {:>9}", "value", "protocol", "completion_ms", "normalized", "verified");
    for r in &rows {
        println!(
            "{:<12} {:<10} {:>14.6} {:>10.3} {:>9}",
            r.label, r.protocol, r.completion_ms, r.normalized, r.verified
        );
    }
    Ok(rows.iter().all(|r| r.verified))
}

fn cmd_fuzz(a: FuzzArgs) -> Result<bool> {
    if a.workload.trace.is_some() {
        bail!("fuzzing generates its trace from a preset; --trace is not supported");
    }
    let cfg = a.config.build()?;
    let w = a.workload.spec()?;
    let opts = FuzzOptions {
        trials: a.trials,
        seed: a.config.seed,
        p_simultaneous: a.p_simultaneous,
        p_sequential: a.p_sequential,
    };
    let report = fuzz_recovery(&cfg, &w, opts)?;
    write(&a.out, "fuzz.json", &serde_json::to_string_pretty(&report)?)?;
    for t in report.trials.iter().filter(|t| !t.passed) {
        let crashes: Vec<String> = t.crashes.iter().map(ToString::to_string).collect();
        let why = t.error.clone().unwrap_or_else(|| format!("{} mismatching words", t.mismatches));
        println!("trial {} FAIL [{}]: {why}", t.trial, crashes.join("; "));
    }
    println!("{} of {} trials passed", report.passed, report.trials.len());
    Ok(report.failed == 0)
}

fn cmd_gen(a: GenArgs) -> Result<bool> {
    let cfg = a.config.build()?;
    let w = a.workload.spec()?;
    let cores = a.cores.unwrap_or(cfg.total_cores());
    let t = generate_trace(&w, cores, a.config.seed)?;
    t.write_to(&a.output).with_context(|| format!("writing {}", a.output.display()))?;
    println!("wrote {} ops for {cores} cores to {}", t.total_ops(), a.output.display());
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::FuzzRecovery(a) => cmd_fuzz(a),
        Cmd::GenTrace(a) => cmd_gen(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
