//! Run results: everything a finished simulation reports, as JSON and as a
//! short text summary.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::{ClusterConfig, Protocol};
use crate::directory::DirStats;
use crate::engine::QueueStats;
use crate::fabric::{ClassBytes, CnBandwidth, FabricCounters};
use crate::logging::LuStats;
use crate::node::{CnStats, CoreStats};
use crate::oracle::VerifyReport;
use crate::recovery::RecoveryReport;
use crate::sim::{SimStats, Simulation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub workload: String,
    pub protocol: Protocol,
    pub seed: u64,
    pub config: ClusterConfig,
    /// Time at which every live core had finished and drained its SB.
    pub completion_ps: u64,
    /// Time of the last event, after in-flight traffic settled.
    pub end_ps: u64,
    pub stats: SimStats,
    pub bytes: ClassBytes,
    pub per_cn_bandwidth: Vec<CnBandwidth>,
    pub fabric: FabricCounters,
    pub queue: QueueStats,
    pub cores: Vec<CoreStats>,
    pub cns: Vec<CnStats>,
    pub logging_units: Vec<LuStats>,
    pub directory: DirStats,
    pub max_dram_log_bytes: u64,
    pub repl_at_head_fraction: f64,
    pub avg_load_latency_ns: f64,
    pub ts_inversions: u64,
    pub golden_commits: u64,
    pub recoveries: Vec<RecoveryReport>,
    pub verification: VerifyReport,
}

fn merge_dir(a: &mut DirStats, b: &DirStats) {
    a.requests += b.requests;
    a.invalidations += b.invalidations;
    a.stale_writebacks += b.stale_writebacks;
    a.stale_acks += b.stale_acks;
    a.dropped_from_failed += b.dropped_from_failed;
    a.max_queue = a.max_queue.max(b.max_queue);
}

impl RunResult {
    pub fn collect(sim: &Simulation, workload: &str, seed: u64) -> Self {
        let cores: Vec<CoreStats> =
            sim.compute_nodes().iter().flat_map(|c| c.cores.iter().map(|k| k.stats.clone())).collect();
        let loads: u64 = cores.iter().map(|c| c.loads).sum();
        let load_ps: u64 = cores.iter().map(|c| c.load_latency_ps).sum();
        let lus: Vec<LuStats> = sim.compute_nodes().iter().map(|c| c.lu.stats.clone()).collect();
        let mut directory = DirStats::default();
        for mn in sim.memory_nodes() {
            merge_dir(&mut directory, &mn.stats);
        }
        let st = sim.stats().clone();
        Self {
            workload: workload.to_string(),
            protocol: sim.config().protocol,
            seed,
            config: sim.config().clone(),
            completion_ps: sim.completed_at().map_or(0, |t| t.ps()),
            end_ps: sim.now_time().ps(),
            bytes: sim.fabric().total_bytes(),
            per_cn_bandwidth: sim.fabric().bandwidth_report().to_vec(),
            fabric: sim.fabric().counters().clone(),
            queue: sim.queue_stats(),
            cns: sim.compute_nodes().iter().map(|c| c.stats.clone()).collect(),
            max_dram_log_bytes: lus.iter().map(|l| l.max_dram_bytes).max().unwrap_or(0),
            logging_units: lus,
            directory,
            repl_at_head_fraction: if st.repl_transactions == 0 {
                0.0
            } else {
                st.repl_at_head as f64 / st.repl_transactions as f64
            },
            avg_load_latency_ns: if loads == 0 { 0.0 } else { load_ps as f64 / loads as f64 / 1000.0 },
            ts_inversions: sim.ts_inversions(),
            golden_commits: sim.oracle().commits(),
            recoveries: sim.recovery_reports().to_vec(),
            verification: sim.verification().clone(),
            stats: st,
            cores,
        }
    }

    pub fn completion_ms(&self) -> f64 {
        self.completion_ps as f64 / 1e9
    }

    pub fn total_bytes(&self) -> u64 {
        let b = &self.bytes;
        b.coherence_bytes + b.replication_bytes + b.logdump_bytes + b.recovery_bytes
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "workload        {}", self.workload);
        let _ = writeln!(s, "protocol        {}", self.protocol);
        let _ = writeln!(s, "seed            {}", self.seed);
        let _ = writeln!(s, "completion      {:.3} ms", self.completion_ms());
        let _ = writeln!(s, "events          {}", self.stats.events);
        let _ = writeln!(
            s,
            "commits         {} slots ({} remote)",
            self.stats.slot_commits, self.stats.remote_slot_commits
        );
        let _ = writeln!(s, "avg load        {:.1} ns", self.avg_load_latency_ns);
        let b = &self.bytes;
        let _ = writeln!(
            s,
            "bytes           coherence {} replication {} logdump {} recovery {}",
            b.coherence_bytes, b.replication_bytes, b.logdump_bytes, b.recovery_bytes
        );
        if self.protocol.replicates() {
            let _ = writeln!(
                s,
                "replication     {} txns, {:.1}% at SB head, {} VALs, max DRAM log {} B",
                self.stats.repl_transactions,
                100.0 * self.repl_at_head_fraction,
                self.stats.val_messages,
                self.max_dram_log_bytes
            );
        }
        for r in &self.recoveries {
            let _ = writeln!(
                s,
                "recovery {}      victims {:?} owned {} shared {} repaired {} msgs {} took {:.2} us",
                r.id,
                r.victims,
                r.owned_lines,
                r.shared_lines,
                r.repaired_words,
                r.messages,
                r.total_ps() as f64 / 1e6
            );
        }
        let v = &self.verification;
        let _ = writeln!(
            s,
            "verification    {} ({} words checked, {} mismatches)",
            if v.passed { "PASS" } else { "FAIL" },
            v.checked_words,
            v.mismatches
        );
        for m in &v.diff {
            let _ = writeln!(s, "  {:#x}: expected {:#x} found {:#x} ({})", m.addr, m.expected, m.found, m.context);
        }
        for r in v.residue.iter().chain(&v.multiple_owners) {
            let _ = writeln!(s, "  {r}");
        }
        s
    }
}
