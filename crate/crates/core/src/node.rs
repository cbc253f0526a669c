//! Compute-node state: cores, store buffers, private L1s, the shared LLC and
//! the Logging Unit.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::addr::{LineAddr, LineData, WORDS_PER_LINE};
use crate::cache::SetAssocCache;
use crate::config::ClusterConfig;
use crate::engine::SimTime;
use crate::logging::LoggingUnit;
use crate::replication::{ReplPhase, SlotRepl, TsCounters};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mesi {
    M,
    E,
    S,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LlcLine {
    pub state: Mesi,
    pub data: LineData,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Slot {
    pub line: LineAddr,
    pub mask: u8,
    pub values: LineData,
    pub remote: bool,
    pub repl: Option<SlotRepl>,
    pub wt_sent: bool,
    pub enqueued: SimTime,
}

impl Slot {
    pub fn new(line: LineAddr, word: usize, value: u64, remote: bool, now: SimTime) -> Self {
        let mut values = [0; WORDS_PER_LINE];
        values[word] = value;
        Self { line, mask: 1 << word, values, remote, repl: None, wt_sent: false, enqueued: now }
    }

    pub fn repl_phase(&self) -> ReplPhase {
        self.repl.as_ref().map_or(ReplPhase::NotSent, SlotRepl::phase)
    }

    pub fn words(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        (0..WORDS_PER_LINE).filter(|w| self.mask & (1 << w) != 0).map(|w| (w, self.values[w]))
    }

    /// A slot can absorb more stores until its REPLs or its write-through are out.
    pub fn open(&self) -> bool {
        self.repl.is_none() && !self.wt_sent
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Deposit {
    Merged,
    Appended,
    Full,
}

/// Retires a store into the SB, merging into the tail slot when allowed.
pub fn deposit(
    sb: &mut VecDeque<Slot>,
    capacity: usize,
    coalescing: bool,
    line: LineAddr,
    word: usize,
    value: u64,
    remote: bool,
    now: SimTime,
) -> Deposit {
    if coalescing {
        if let Some(tail) = sb.back_mut() {
            if tail.line == line && tail.remote == remote && tail.open() {
                tail.mask |= 1 << word;
                tail.values[word] = value;
                return Deposit::Merged;
            }
        }
    }
    if sb.len() >= capacity {
        return Deposit::Full;
    }
    sb.push_back(Slot::new(line, word, value, remote, now));
    Deposit::Appended
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wait {
    None,
    /// A load miss is outstanding.
    Load(LineAddr),
    /// The SB is full.
    SbFull,
    /// A sync op waits for the SB to empty.
    Drain,
    /// A sync op waits for exclusive ownership of its line.
    SyncLine(LineAddr),
    LockQueue(u32),
    Barrier,
    Done,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreStats {
    pub ops: u64,
    pub loads: u64,
    pub remote_loads: u64,
    pub load_latency_ps: u64,
    pub stores: u64,
    pub remote_stores: u64,
    pub commits: u64,
    pub remote_commits: u64,
    pub coalesced: u64,
    pub sb_full_stall_ps: u64,
    pub sync_wait_ps: u64,
    pub max_sb: u64,
    pub done_at_ps: u64,
}

#[derive(Clone, Debug)]
pub struct Core {
    pub gid: u32,
    pub pc: usize,
    pub sb: VecDeque<Slot>,
    pub wait: Wait,
    pub wait_since: SimTime,
    pub next_txn: u64,
    pub wt_in_flight: bool,
    pub step_pending: bool,
    pub drain_pending: bool,
    /// Stopped by a recovery interrupt.
    pub parked: bool,
    pub barrier_seen: BTreeMap<u32, u32>,
    pub stats: CoreStats,
}

impl Core {
    pub fn new(gid: u32) -> Self {
        Self {
            gid,
            pc: 0,
            sb: VecDeque::new(),
            wait: Wait::None,
            wait_since: SimTime::ZERO,
            next_txn: 1,
            wt_in_flight: false,
            step_pending: false,
            drain_pending: false,
            parked: false,
            barrier_seen: BTreeMap::new(),
            stats: CoreStats::default(),
        }
    }

    pub fn sb_empty(&self) -> bool {
        self.sb.is_empty() && !self.wt_in_flight
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mshr {
    pub exclusive: bool,
    /// A store wants ownership while a read is outstanding.
    pub upgrade: bool,
    /// False while deferred behind a writeback of the same line.
    pub sent: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnStats {
    pub llc_evictions: u64,
    pub writebacks: u64,
    pub invalidations_received: u64,
    pub requests_sent: u64,
}

pub struct ComputeNode {
    pub id: u16,
    pub alive: bool,
    pub paused: bool,
    pub cores: Vec<Core>,
    pub l1: Vec<SetAssocCache<()>>,
    pub llc: SetAssocCache<LlcLine>,
    pub mshr: BTreeMap<LineAddr, Mshr>,
    /// Evicted owned lines awaiting WbAck (data present if the line was dirty).
    pub wb_buffer: BTreeMap<LineAddr, Option<LineData>>,
    pub ts: TsCounters,
    pub lu: LoggingUnit,
    pub stats: CnStats,
}

impl ComputeNode {
    pub fn new(id: u16, cfg: &ClusterConfig) -> Self {
        let first = id as u32 * cfg.cores_per_cn as u32;
        Self {
            id,
            alive: true,
            paused: false,
            cores: (0..cfg.cores_per_cn as u32).map(|k| Core::new(first + k)).collect(),
            l1: (0..cfg.cores_per_cn).map(|_| SetAssocCache::new(cfg.l1.sets(cfg.line_bytes), cfg.l1.assoc)).collect(),
            llc: SetAssocCache::new(cfg.llc.sets(cfg.line_bytes), cfg.llc.assoc),
            mshr: BTreeMap::new(),
            wb_buffer: BTreeMap::new(),
            ts: TsCounters::new(cfg.num_cns),
            lu: LoggingUnit::new(id, cfg),
            stats: CnStats::default(),
        }
    }

    pub fn state(&self, line: LineAddr) -> Option<Mesi> {
        self.llc.get(line).map(|l| l.state)
    }

    /// Owned in M or E: stores to the line may commit.
    pub fn owns(&self, line: LineAddr) -> bool {
        matches!(self.state(line), Some(Mesi::M | Mesi::E))
    }

    pub fn drop_from_l1s(&mut self, line: LineAddr) {
        for l1 in &mut self.l1 {
            l1.remove(line);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dep(sb: &mut VecDeque<Slot>, line: LineAddr, word: usize, value: u64) -> Deposit {
        deposit(sb, 72, true, line, word, value, true, SimTime::ZERO)
    }

    #[test]
    fn consecutive_same_line_stores_coalesce() {
        let mut sb = VecDeque::new();
        let b = 0x1000;
        assert_eq!(dep(&mut sb, b, 0, 1), Deposit::Appended);
        assert_eq!(dep(&mut sb, b, 1, 2), Deposit::Merged);
        assert_eq!(dep(&mut sb, b, 2, 3), Deposit::Merged);
        assert_eq!(sb.len(), 1);
        assert_eq!(sb[0].mask.count_ones(), 3);
    }

    #[test]
    fn interleaved_line_blocks_merge() {
        let mut sb = VecDeque::new();
        dep(&mut sb, 0x1000, 0, 1);
        dep(&mut sb, 0x2000, 0, 2);
        dep(&mut sb, 0x1000, 1, 3);
        assert_eq!(sb.len(), 3);
    }

    #[test]
    fn same_word_last_value_wins() {
        let mut sb = VecDeque::new();
        dep(&mut sb, 0x1000, 4, 1);
        dep(&mut sb, 0x1000, 4, 9);
        assert_eq!(sb.len(), 1);
        assert_eq!(sb[0].values[4], 9);
        assert_eq!(sb[0].mask, 1 << 4);
    }

    #[test]
    fn sealed_tail_does_not_merge() {
        let mut sb = VecDeque::new();
        dep(&mut sb, 0x1000, 0, 1);
        sb[0].repl = Some(SlotRepl::new(1, 0, vec![0]));
        assert_eq!(dep(&mut sb, 0x1000, 1, 2), Deposit::Appended);
    }

    #[test]
    fn full_sb_rejects_new_slot_but_merges() {
        let mut sb = VecDeque::new();
        assert_eq!(deposit(&mut sb, 1, true, 0x40, 0, 1, true, SimTime::ZERO), Deposit::Appended);
        assert_eq!(deposit(&mut sb, 1, true, 0x40, 1, 1, true, SimTime::ZERO), Deposit::Merged);
        assert_eq!(deposit(&mut sb, 1, true, 0x80, 0, 1, true, SimTime::ZERO), Deposit::Full);
    }
}
