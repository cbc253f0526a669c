//! The per-CN Logging Unit.
//!
//! REPLs land in the SRAM buffer as invalid entries. A VAL validates them and
//! stamps the sender's logical timestamp; validated groups then move to the
//! DRAM log strictly in timestamp order per source CN. The DRAM log is dumped
//! to the MNs periodically and traversed newest-first during recovery.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::addr::{word_addr, LineAddr, WORDS_PER_LINE};
use crate::config::{ClusterConfig, DRAM_ENTRY_BYTES};
use crate::engine::SimTime;
use crate::fabric::{WordHistory, FLIT_BYTES};
use crate::replication::ReplBody;

/// One logged update as reported to a recovering MN.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogVersion {
    pub core: u32,
    pub txn: u64,
    pub value: u64,
    pub from_sram: bool,
}

impl LogVersion {
    pub fn same_update(&self, other: &LogVersion) -> bool {
        self.core == other.core && self.txn == other.txn
    }
}

/// Identity of a logged word update: (requesting core, transaction, word).
pub type EntryKey = (u32, u64, u8);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DramEntry {
    pub core: u32,
    pub txn: u64,
    pub src_cn: u16,
    pub line: LineAddr,
    pub word: u8,
    pub value: u64,
    pub epoch: u32,
    /// Shadow copy of the VAL timestamp, kept only for order checking.
    pub ts: u64,
}

impl DramEntry {
    pub fn key(&self) -> EntryKey {
        (self.core, self.txn, self.word)
    }
}

#[derive(Clone, Debug)]
struct SramGroup {
    src_cn: u16,
    line: LineAddr,
    epoch: u32,
    words: Vec<(u8, u64)>,
    ts: Option<u64>,
    valid_seq: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LuStats {
    pub repls: u64,
    pub entries_logged: u64,
    pub vals: u64,
    pub groups_pushed: u64,
    pub ts_inversions: u64,
    pub spills: u64,
    pub max_dram_bytes: u64,
    pub max_sram_entries: u64,
    pub invalid_gc: u64,
    pub dumped_entries: u64,
    pub cleared_entries: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LogError {
    UnmatchedVal { core: u32, txn: u64 },
    DramOverflow { bytes: u64, capacity: u64 },
}

#[derive(Clone, Debug)]
pub struct LoggingUnit {
    pub cn: u16,
    sram_capacity: usize,
    dram_capacity: u64,
    sram: BTreeMap<(u32, u64), SramGroup>,
    sram_entries: usize,
    ready: BTreeMap<(u16, u64), (u32, u64)>,
    next_expected: Vec<u64>,
    last_pushed_ts: Vec<u64>,
    dram: Vec<DramEntry>,
    /// REPLs waiting for SRAM space, with their arrival time.
    pub backlog: VecDeque<(ReplBody, SimTime)>,
    /// The unit processes one REPL at a time.
    pub busy_until: SimTime,
    /// Dump round in progress: (round, DRAM watermark).
    pub dump_round: Option<(u64, usize)>,
    seq: u64,
    pub stats: LuStats,
}

impl LoggingUnit {
    pub fn new(cn: u16, cfg: &ClusterConfig) -> Self {
        Self {
            cn,
            sram_capacity: cfg.sram_capacity_entries(),
            dram_capacity: cfg.dram_log_bytes,
            sram: BTreeMap::new(),
            sram_entries: 0,
            ready: BTreeMap::new(),
            next_expected: vec![1; cfg.num_cns],
            last_pushed_ts: vec![0; cfg.num_cns],
            dram: Vec::new(),
            backlog: VecDeque::new(),
            busy_until: SimTime::ZERO,
            dump_round: None,
            seq: 0,
            stats: LuStats::default(),
        }
    }

    pub fn sram_entries(&self) -> usize {
        self.sram_entries
    }

    pub fn dram_entries(&self) -> &[DramEntry] {
        &self.dram
    }

    pub fn dram_bytes(&self) -> u64 {
        self.dram.len() as u64 * DRAM_ENTRY_BYTES
    }

    pub fn has_room(&self, words: usize) -> bool {
        self.sram_entries + words <= self.sram_capacity
    }

    /// Logs a REPL as invalid entries. Fails without side effects when the SRAM is full,
    /// unless `force` (overflow spill) is set.
    pub fn append(&mut self, body: &ReplBody, force: bool) -> bool {
        let k = body.word_count();
        if !force && !self.has_room(k) {
            return false;
        }
        if force && !self.has_room(k) {
            self.stats.spills += 1;
        }
        let words = body.words().map(|(w, v)| (w as u8, v)).collect();
        let group =
            SramGroup { src_cn: body.requester_cn, line: body.line, epoch: body.epoch, words, ts: None, valid_seq: 0 };
        if let Some(old) = self.sram.insert((body.core, body.txn), group) {
            // A re-sent REPL for an update already logged here replaces it.
            self.sram_entries -= old.words.len();
        }
        self.sram_entries += k;
        self.stats.repls += 1;
        self.stats.entries_logged += k as u64;
        self.stats.max_sram_entries = self.stats.max_sram_entries.max(self.sram_entries as u64);
        true
    }

    /// Validates the entries of `(core, txn)` and moves everything now in order to DRAM.
    pub fn on_val(&mut self, core: u32, txn: u64, ts: u64) -> Result<usize, LogError> {
        self.seq += 1;
        let seq = self.seq;
        let g = self.sram.get_mut(&(core, txn)).ok_or(LogError::UnmatchedVal { core, txn })?;
        g.ts = Some(ts);
        g.valid_seq = seq;
        let src = g.src_cn;
        self.ready.insert((src, ts), (core, txn));
        self.stats.vals += 1;
        self.drain_source(src)
    }

    fn drain_source(&mut self, src: u16) -> Result<usize, LogError> {
        let mut moved = 0;
        loop {
            let expected = self.next_expected[src as usize];
            let Some(key) = self.ready.remove(&(src, expected)) else { break };
            let g = self.sram.remove(&key).expect("ready group present");
            self.sram_entries -= g.words.len();
            self.next_expected[src as usize] += 1;
            let ts = g.ts.expect("validated");
            if ts <= self.last_pushed_ts[src as usize] {
                self.stats.ts_inversions += 1;
            }
            self.last_pushed_ts[src as usize] = ts;
            for (word, value) in g.words {
                self.dram.push(DramEntry {
                    core: key.0,
                    txn: key.1,
                    src_cn: src,
                    line: g.line,
                    word,
                    value,
                    epoch: g.epoch,
                    ts,
                });
            }
            self.stats.groups_pushed += 1;
            moved += 1;
        }
        let bytes = self.dram_bytes();
        self.stats.max_dram_bytes = self.stats.max_dram_bytes.max(bytes);
        if bytes > self.dram_capacity {
            return Err(LogError::DramOverflow { bytes, capacity: self.dram_capacity });
        }
        Ok(moved)
    }

    /// Independent scan of the DRAM log: per source CN, shadow timestamps must ascend.
    pub fn count_order_violations(&self) -> u64 {
        let mut last: BTreeMap<u16, (u64, u32, u64)> = BTreeMap::new();
        let mut bad = 0;
        for e in &self.dram {
            if let Some(&(ts, core, txn)) = last.get(&e.src_cn) {
                let same_group = ts == e.ts && core == e.core && txn == e.txn;
                if !same_group && e.ts <= ts {
                    bad += 1;
                }
            }
            last.insert(e.src_cn, (e.ts, e.core, e.txn));
        }
        bad
    }

    /// Valid SRAM entries newest first, then DRAM newest to oldest, for each requested line.
    /// Also returns how many invalid SRAM entries were left out.
    pub fn traverse(&self, lines: &[LineAddr]) -> (Vec<(LineAddr, Vec<WordHistory>)>, u64) {
        let mut out: BTreeMap<LineAddr, Vec<WordHistory>> =
            lines.iter().map(|&l| (l, vec![Vec::new(); WORDS_PER_LINE])).collect();
        let mut invalid = 0;
        let mut valid: Vec<(&(u32, u64), &SramGroup)> = Vec::new();
        for (key, g) in &self.sram {
            if !out.contains_key(&g.line) {
                continue;
            }
            if g.ts.is_some() {
                valid.push((key, g));
            } else {
                invalid += g.words.len() as u64;
            }
        }
        valid.sort_by(|a, b| b.1.valid_seq.cmp(&a.1.valid_seq));
        for (&(core, txn), g) in valid {
            let hist = out.get_mut(&g.line).expect("filtered");
            for &(w, value) in &g.words {
                hist[w as usize].push(LogVersion { core, txn, value, from_sram: true });
            }
        }
        for e in self.dram.iter().rev() {
            if let Some(hist) = out.get_mut(&e.line) {
                hist[e.word as usize].push(LogVersion { core: e.core, txn: e.txn, value: e.value, from_sram: false });
            }
        }
        (lines.iter().map(|l| (*l, out[l].clone())).collect(), invalid)
    }

    /// Starts a dump round: fixes the watermark and returns the entries this unit must persist.
    pub fn begin_dump(&mut self, round: u64, mut designated: impl FnMut(&DramEntry) -> bool) -> Vec<DramEntry> {
        let watermark = self.dram.len();
        self.dump_round = Some((round, watermark));
        let picked: Vec<DramEntry> = self.dram[..watermark].iter().filter(|e| designated(e)).cloned().collect();
        self.stats.dumped_entries += picked.len() as u64;
        picked
    }

    /// Clears entries below the round's watermark that `persisted` confirms are safe.
    pub fn clear_round(&mut self, round: u64, mut persisted: impl FnMut(&DramEntry) -> bool) -> usize {
        let Some((r, watermark)) = self.dump_round else { return 0 };
        if r != round {
            return 0;
        }
        self.dump_round = None;
        let tail = self.dram.split_off(watermark.min(self.dram.len()));
        let before = self.dram.len();
        self.dram.retain(|e| !persisted(e));
        let cleared = before - self.dram.len();
        self.dram.extend(tail);
        self.stats.cleared_entries += cleared as u64;
        cleared
    }

    pub fn cancel_dump(&mut self) {
        self.dump_round = None;
    }

    /// Drops unvalidated entries (and queued REPLs) from crashed requesters.
    pub fn gc_requesters(&mut self, dead: &[u16]) -> u64 {
        let doomed: Vec<(u32, u64)> =
            self.sram.iter().filter(|(_, g)| g.ts.is_none() && dead.contains(&g.src_cn)).map(|(k, _)| *k).collect();
        let mut n = 0;
        for k in doomed {
            let g = self.sram.remove(&k).expect("present");
            self.sram_entries -= g.words.len();
            n += g.words.len() as u64;
        }
        self.backlog.retain(|(b, _)| !dead.contains(&b.requester_cn));
        self.stats.invalid_gc += n;
        n
    }
}

/// Word address of a DRAM entry.
pub fn entry_addr(e: &DramEntry) -> u64 {
    word_addr(e.line, e.word as usize)
}

/// Compression used for dump segments.
pub trait Compressor: Send + Sync {
    fn compressed_len(&self, raw: &[u8]) -> u64;
}

/// Fixed-ratio model: `ceil(len / ratio)` bytes.
#[derive(Clone, Copy, Debug)]
pub struct RatioCompressor {
    pub ratio: f64,
}

impl Compressor for RatioCompressor {
    fn compressed_len(&self, raw: &[u8]) -> u64 {
        (raw.len() as f64 / self.ratio).ceil() as u64
    }
}

/// 16-byte encoding: 2 bytes requester, 6 bytes word address, 8 bytes value.
pub fn encode_entries(entries: &[DramEntry]) -> Vec<u8> {
    let mut out = Vec::with_capacity(entries.len() * DRAM_ENTRY_BYTES as usize);
    for e in entries {
        out.extend_from_slice(&(e.core as u16).to_le_bytes());
        out.extend_from_slice(&entry_addr(e).to_le_bytes()[..6]);
        out.extend_from_slice(&e.value.to_le_bytes());
    }
    out
}

pub fn dump_message_count(compressed_bytes: u64) -> u64 {
    compressed_bytes.div_ceil(FLIT_BYTES)
}
