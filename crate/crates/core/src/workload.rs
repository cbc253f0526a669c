//! Synthetic workloads.
//!
//! Generated traces are data-race-free by construction:
//!
//! * Shared data lines are partitioned among cores, and the partition rotates
//!   at every barrier, so in each barrier phase a line is touched by exactly
//!   one core.
//! * Lock-protected data gives every core its own word per lock; loads of
//!   other cores' words only happen while holding the same lock.
//! * A read-only region is never written.
//!
//! Because every word has a single writer per phase, the final memory image
//! does not depend on timing.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::addr::{self, LINE_BYTES, WORDS_PER_LINE, WORD_BYTES};
use crate::engine::{streams, SeededRng};
use crate::error::SpecError;
use crate::trace::{Trace, TraceOp};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AccessDistribution {
    Uniform,
    Zipf {
        theta: f64,
    },
    /// Sequential sweep over the core's lines.
    Stream,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub name: String,
    /// Memory operations (loads + stores) per core; sync and compute ops come on top.
    pub ops_per_core: usize,
    pub remote_fraction: f64,
    pub write_fraction: f64,
    pub access_distribution: AccessDistribution,
    pub footprint_bytes: u64,
    /// Mean length of runs of consecutive stores to one line (1..=8).
    pub coalescing_run_length: f64,
    /// Locks plus barriers per thousand memory ops.
    pub sync_density: f64,
    /// Share of `sync_density` spent on barriers; the rest are critical sections.
    pub barrier_share: f64,
    /// Share of remote loads that go to the read-only region.
    pub readonly_share: f64,
    /// Mean cycles of a COMPUTE op inserted before each memory op (0 = none).
    pub compute_mean_cycles: u32,
    pub num_locks: u32,
}

pub const PRESETS: &[&str] = &["ycsb-like", "write-heavy", "coalesce-friendly", "sparse-sync"];

impl WorkloadSpec {
    /// 80% reads / 20% writes, uniform record choice, all accesses to CXL memory.
    pub fn ycsb_like() -> Self {
        Self {
            name: "ycsb-like".into(),
            ops_per_core: 1600,
            remote_fraction: 1.0,
            write_fraction: 0.2,
            access_distribution: AccessDistribution::Uniform,
            footprint_bytes: 4 << 20,
            coalescing_run_length: 1.0,
            sync_density: 2.0,
            barrier_share: 0.5,
            readonly_share: 0.5,
            compute_mean_cycles: 40,
            num_locks: 16,
        }
    }

    /// Ocean-like: about 40% of ops are remote writes, streaming over the core's lines.
    pub fn write_heavy() -> Self {
        Self {
            name: "write-heavy".into(),
            ops_per_core: 1600,
            remote_fraction: 0.5,
            write_fraction: 0.8,
            access_distribution: AccessDistribution::Stream,
            footprint_bytes: 2 << 20,
            coalescing_run_length: 2.0,
            sync_density: 1.5,
            barrier_share: 1.0,
            readonly_share: 0.3,
            compute_mean_cycles: 60,
            num_locks: 8,
        }
    }

    /// Runs of 3-8 consecutive stores to the same line.
    pub fn coalesce_friendly() -> Self {
        Self {
            name: "coalesce-friendly".into(),
            ops_per_core: 1600,
            remote_fraction: 0.6,
            write_fraction: 0.5,
            access_distribution: AccessDistribution::Uniform,
            footprint_bytes: 2 << 20,
            coalescing_run_length: 5.5,
            sync_density: 2.0,
            barrier_share: 0.5,
            readonly_share: 0.3,
            compute_mean_cycles: 60,
            num_locks: 8,
        }
    }

    /// Barrier-dominated phases with little work between them.
    pub fn sparse_sync() -> Self {
        Self {
            name: "sparse-sync".into(),
            ops_per_core: 1600,
            remote_fraction: 0.5,
            write_fraction: 0.3,
            access_distribution: AccessDistribution::Zipf { theta: 0.9 },
            footprint_bytes: 1 << 20,
            coalescing_run_length: 1.5,
            sync_density: 12.0,
            barrier_share: 0.9,
            readonly_share: 0.4,
            compute_mean_cycles: 30,
            num_locks: 4,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "ycsb-like" | "ycsb" => Some(Self::ycsb_like()),
            "write-heavy" | "ocean-like" => Some(Self::write_heavy()),
            "coalesce-friendly" => Some(Self::coalesce_friendly()),
            "sparse-sync" => Some(Self::sparse_sync()),
            _ => None,
        }
    }

    pub fn with_ops(mut self, ops_per_core: usize) -> Self {
        self.ops_per_core = ops_per_core;
        self
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        for (field, value) in [
            ("remote_fraction", self.remote_fraction),
            ("write_fraction", self.write_fraction),
            ("barrier_share", self.barrier_share),
            ("readonly_share", self.readonly_share),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SpecError::Fraction { field, value });
            }
        }
        if !(1.0..=WORDS_PER_LINE as f64).contains(&self.coalescing_run_length) {
            return Err(SpecError::Invalid(format!(
                "coalescing_run_length {} outside [1, 8]",
                self.coalescing_run_length
            )));
        }
        if self.sync_density < 0.0 || !self.sync_density.is_finite() {
            return Err(SpecError::Invalid("sync_density must be non-negative".into()));
        }
        if self.footprint_bytes < LINE_BYTES {
            return Err(SpecError::Invalid("footprint smaller than one line".into()));
        }
        if let AccessDistribution::Zipf { theta } = self.access_distribution {
            if !(theta > 0.0) {
                return Err(SpecError::Invalid("zipf theta must be positive".into()));
            }
        }
        if self.num_locks == 0 && self.barrier_share < 1.0 && self.sync_density > 0.0 {
            return Err(SpecError::Invalid("critical sections need at least one lock".into()));
        }
        Ok(())
    }

    pub fn barrier_count(&self) -> usize {
        (self.ops_per_core as f64 * self.sync_density / 1000.0 * self.barrier_share).round() as usize
    }
}

/// Span of CN-local address space reserved per core.
const LOCAL_SPAN: u64 = 1 << 24;
const LOCAL_LINES: u64 = 512;

/// Value written by the `op_index`-th op of a core. Unique and nonzero.
pub fn store_value(core: usize, op_index: usize) -> u64 {
    ((core as u64 + 1) << 40) | (op_index as u64 + 1)
}

/// Words reserved per lock in the lock-data region, one per core.
fn lock_area_lines(num_cores: usize) -> u64 {
    (num_cores as u64).div_ceil(WORDS_PER_LINE as u64)
}

pub fn lock_slot_addr(sync_id: u32, core: usize, num_cores: usize) -> u64 {
    addr::LOCK_DATA_BASE + sync_id as u64 * lock_area_lines(num_cores) * LINE_BYTES + core as u64 * WORD_BYTES
}

struct CoreGen<'a> {
    spec: &'a WorkloadSpec,
    core: usize,
    num_cores: usize,
    rng: ChaCha8Rng,
    zipf: Option<Zipf<f64>>,
    lines_per_core: u64,
    readonly_lines: u64,
    cursor: u64,
    ops: Vec<TraceOp>,
}

impl CoreGen<'_> {
    fn pick_index(&mut self) -> u64 {
        match self.spec.access_distribution {
            AccessDistribution::Uniform => self.rng.random_range(0..self.lines_per_core),
            AccessDistribution::Zipf { .. } => {
                let z = self.zipf.as_ref().expect("zipf sampler");
                (z.sample(&mut self.rng) as u64).saturating_sub(1).min(self.lines_per_core - 1)
            }
            AccessDistribution::Stream => {
                let k = self.cursor;
                self.cursor = (self.cursor + 1) % self.lines_per_core;
                k
            }
        }
    }

    fn owned_line(&mut self, phase: usize) -> u64 {
        let n = self.num_cores as u64;
        let k = self.pick_index();
        let slot = (self.core as u64 + n - (phase as u64 % n)) % n;
        addr::SHARED_DATA_BASE + (k * n + slot) * LINE_BYTES
    }

    fn local_line(&mut self) -> u64 {
        addr::LOCAL_BASE + self.core as u64 * LOCAL_SPAN + self.rng.random_range(0..LOCAL_LINES) * LINE_BYTES
    }

    fn run_length(&mut self, remaining: usize) -> usize {
        let m = self.spec.coalescing_run_length;
        let spread = (m - 1.0).min(WORDS_PER_LINE as f64 - m);
        let l = if spread > 0.0 { (m + self.rng.random_range(-spread..=spread)).round() } else { m.round() };
        (l.max(1.0) as usize).min(WORDS_PER_LINE).min(remaining)
    }

    fn compute(&mut self) {
        let mean = self.spec.compute_mean_cycles;
        if mean > 0 {
            let cycles = self.rng.random_range(1..=2 * mean - 1);
            self.ops.push(TraceOp::Compute { cycles });
        }
    }

    fn critical_section(&mut self) -> usize {
        let id = self.rng.random_range(0..self.spec.num_locks);
        let n = self.rng.random_range(1..=3usize);
        self.ops.push(TraceOp::LockAcq { sync_id: id });
        for _ in 0..n {
            if self.rng.random_bool(self.spec.write_fraction) {
                self.ops.push(TraceOp::Store { addr: lock_slot_addr(id, self.core, self.num_cores), remote: true });
            } else {
                let other = self.rng.random_range(0..self.num_cores);
                self.ops.push(TraceOp::Load { addr: lock_slot_addr(id, other, self.num_cores), remote: true });
            }
        }
        self.ops.push(TraceOp::LockRel { sync_id: id });
        n
    }

    fn generate(mut self) -> Vec<TraceOp> {
        let spec = self.spec;
        let total = spec.ops_per_core;
        let barriers = spec.barrier_count();
        let phase_len = (total / (barriers + 1)).max(1);
        let lock_p = (spec.sync_density / 1000.0 * (1.0 - spec.barrier_share)).clamp(0.0, 1.0);
        let m = spec.coalescing_run_length;
        let wf = spec.write_fraction;
        // Per-event store probability so that stores/ops matches write_fraction despite runs.
        let store_event_p = if wf >= 1.0 { 1.0 } else { wf / (m * (1.0 - wf) + wf) };

        let mut produced = 0usize;
        let mut phase = 0usize;
        while produced < total || phase < barriers {
            if phase < barriers && produced >= (phase + 1) * phase_len || produced >= total {
                self.ops.push(TraceOp::Barrier { sync_id: (phase % 2) as u32 });
                phase += 1;
                continue;
            }
            if lock_p > 0.0 && self.rng.random_bool(lock_p) {
                produced += self.critical_section();
                continue;
            }
            self.compute();
            let remote = self.rng.random_bool(spec.remote_fraction);
            if self.rng.random_bool(store_event_p) {
                let len = self.run_length(total - produced);
                let line = if remote { self.owned_line(phase) } else { self.local_line() };
                let start = if matches!(spec.access_distribution, AccessDistribution::Stream) {
                    0
                } else {
                    self.rng.random_range(0..WORDS_PER_LINE)
                };
                for i in 0..len {
                    let w = (start + i) % WORDS_PER_LINE;
                    self.ops.push(TraceOp::Store { addr: addr::word_addr(line, w), remote });
                }
                produced += len;
            } else {
                let line = if !remote {
                    self.local_line()
                } else if self.rng.random_bool(spec.readonly_share) {
                    addr::SHARED_READONLY_BASE + self.rng.random_range(0..self.readonly_lines) * LINE_BYTES
                } else {
                    self.owned_line(phase)
                };
                let w = self.rng.random_range(0..WORDS_PER_LINE);
                self.ops.push(TraceOp::Load { addr: addr::word_addr(line, w), remote });
                produced += 1;
            }
        }
        self.ops
    }
}

/// Generates `num_cores` per-core traces. A pure function of `(spec, num_cores, seed)`.
pub fn generate_trace(spec: &WorkloadSpec, num_cores: usize, seed: u64) -> Result<Trace, SpecError> {
    spec.validate()?;
    if num_cores == 0 {
        return Err(SpecError::Invalid("need at least one core".into()));
    }
    let lines_total = (spec.footprint_bytes / LINE_BYTES).max(num_cores as u64);
    let lines_per_core = (lines_total / num_cores as u64).max(1);
    let zipf = match spec.access_distribution {
        AccessDistribution::Zipf { theta } => {
            Some(Zipf::new(lines_per_core as f64, theta).map_err(|e| SpecError::Invalid(format!("zipf: {e}")))?)
        }
        _ => None,
    };
    let cores = (0..num_cores)
        .map(|core| {
            CoreGen {
                spec,
                core,
                num_cores,
                rng: SeededRng::stream(seed, streams::WORKLOAD_BASE + core as u64),
                zipf: zipf.clone(),
                lines_per_core,
                readonly_lines: (lines_total / 4).max(1),
                cursor: 0,
                ops: Vec::with_capacity(spec.ops_per_core * 2),
            }
            .generate()
        })
        .collect();
    Ok(Trace::new(cores))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fractions(t: &Trace) -> (f64, f64, usize) {
        let mut mem = 0usize;
        let mut remote = 0usize;
        let mut writes = 0usize;
        for op in t.cores.iter().flatten() {
            match op {
                TraceOp::Load { remote: r, .. } => {
                    mem += 1;
                    remote += *r as usize;
                }
                TraceOp::Store { remote: r, .. } => {
                    mem += 1;
                    writes += 1;
                    remote += *r as usize;
                }
                _ => {}
            }
        }
        (remote as f64 / mem as f64, writes as f64 / mem as f64, mem)
    }

    #[test]
    fn no_writes_when_fraction_zero() {
        let mut spec = WorkloadSpec::ycsb_like().with_ops(300);
        spec.write_fraction = 0.0;
        let t = generate_trace(&spec, 8, 1).unwrap();
        assert!(t.cores.iter().flatten().all(|op| !matches!(op, TraceOp::Store { .. })));
    }

    #[test]
    fn ycsb_write_fraction() {
        let t = generate_trace(&WorkloadSpec::ycsb_like(), 64, 11).unwrap();
        let (remote, writes, mem) = fractions(&t);
        assert!(mem >= 100_000);
        assert!((0.19..=0.21).contains(&writes), "write fraction {writes}");
        assert!((remote - 1.0).abs() <= 0.01);
    }

    #[test]
    fn presets_hit_fractions() {
        for name in PRESETS {
            let spec = WorkloadSpec::preset(name).unwrap();
            let t = generate_trace(&spec, 64, 5).unwrap();
            let (remote, writes, mem) = fractions(&t);
            assert!(mem >= 100_000, "{name}");
            assert!((remote - spec.remote_fraction).abs() <= 0.01, "{name}: remote {remote}");
            assert!((writes - spec.write_fraction).abs() <= 0.01, "{name}: writes {writes}");
            t.check_barriers().unwrap();
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = WorkloadSpec::coalesce_friendly().with_ops(200);
        assert_eq!(generate_trace(&spec, 8, 3).unwrap(), generate_trace(&spec, 8, 3).unwrap());
        assert_ne!(generate_trace(&spec, 8, 3).unwrap(), generate_trace(&spec, 8, 4).unwrap());
    }

    #[test]
    fn bad_fraction_rejected() {
        let mut spec = WorkloadSpec::ycsb_like();
        spec.write_fraction = 1.5;
        assert!(matches!(generate_trace(&spec, 4, 0), Err(SpecError::Fraction { field: "write_fraction", .. })));
    }

    #[test]
    fn remote_stores_stay_in_remote_range() {
        let t = generate_trace(&WorkloadSpec::write_heavy().with_ops(500), 16, 2).unwrap();
        for op in t.cores.iter().flatten() {
            if let TraceOp::Store { addr, remote } = *op {
                assert_eq!(remote, addr::is_remote(addr));
                assert_eq!(addr::line_of(addr) % LINE_BYTES, 0);
            }
        }
    }
}
