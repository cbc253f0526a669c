//! Memory-node side: full-map directory, memory image and persisted log region.
//!
//! Transactions on one line are serialized. A transaction sends its
//! invalidations, waits for every Inv_ACK, updates directory state and
//! memory, and then finishes after the memory access latency by sending the
//! response. Requests arriving meanwhile wait in the line's queue.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::addr::{LineAddr, LineData, WORDS_PER_LINE};
use crate::engine::SimTime;
use crate::fabric::Body;
use crate::logging::LogVersion;

pub type CnMask = u64;

pub fn bit(cn: u16) -> CnMask {
    1 << cn
}

pub fn members(mask: CnMask) -> impl Iterator<Item = u16> {
    (0..64u16).filter(move |c| mask & bit(*c) != 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DirState {
    Uncached,
    Shared(CnMask),
    Owned(u16),
}

impl DirState {
    fn holders(self) -> CnMask {
        match self {
            DirState::Uncached => 0,
            DirState::Shared(s) => s,
            DirState::Owned(o) => bit(o),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReqKind {
    Rd,
    RdX,
    WbEvict(Option<LineData>),
    WtStore { core: u32, mask: u8, values: LineData },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Request {
    pub from: u16,
    pub kind: ReqKind,
}

#[derive(Clone, Debug)]
struct Txn {
    req: Request,
    waiting: CnMask,
    /// Held until recovery repairs the line.
    hold: bool,
    /// State already updated; only the response remains.
    finishing: bool,
}

#[derive(Clone, Debug)]
struct DirEntry {
    state: DirState,
    busy: Option<Txn>,
    queue: VecDeque<Request>,
}

impl Default for DirEntry {
    fn default() -> Self {
        Self { state: DirState::Uncached, busy: None, queue: VecDeque::new() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DirAction {
    /// Send to a CN now.
    Send { to: u16, body: Body },
    /// Schedule [`MemoryNode::finish`] for this line after `delay`.
    FinishAfter { line: LineAddr, delay: SimTime },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PersistedEntry {
    pub core: u32,
    pub txn: u64,
    pub line: LineAddr,
    pub word: u8,
    pub value: u64,
}

/// One compressed dump segment as stored by an MN.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub round: u64,
    pub source_cn: u16,
    pub first_line: LineAddr,
    pub last_line: LineAddr,
    pub compressed_bytes: u64,
    pub entries: Vec<PersistedEntry>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirStats {
    pub requests: u64,
    pub invalidations: u64,
    pub stale_writebacks: u64,
    pub stale_acks: u64,
    pub dropped_from_failed: u64,
    pub max_queue: u64,
}

#[derive(Clone, Debug)]
pub struct MemoryNode {
    pub id: u16,
    dram: SimTime,
    pmem: SimTime,
    dir: BTreeMap<LineAddr, DirEntry>,
    memory: BTreeMap<LineAddr, LineData>,
    persisted: Vec<Segment>,
    failed: CnMask,
    pub stats: DirStats,
}

impl MemoryNode {
    pub fn new(id: u16, dram: SimTime, pmem: SimTime) -> Self {
        Self {
            id,
            dram,
            pmem,
            dir: BTreeMap::new(),
            memory: BTreeMap::new(),
            persisted: Vec::new(),
            failed: 0,
            stats: DirStats::default(),
        }
    }

    pub fn state(&self, line: LineAddr) -> DirState {
        self.dir.get(&line).map_or(DirState::Uncached, |e| e.state)
    }

    pub fn is_busy(&self, line: LineAddr) -> bool {
        self.dir.get(&line).is_some_and(|e| e.busy.is_some())
    }

    pub fn line(&self, line: LineAddr) -> LineData {
        self.memory.get(&line).copied().unwrap_or([0; WORDS_PER_LINE])
    }

    pub fn memory(&self) -> &BTreeMap<LineAddr, LineData> {
        &self.memory
    }

    pub fn failed(&self) -> CnMask {
        self.failed
    }

    /// Directory entries as (line, state), in address order.
    pub fn entries(&self) -> impl Iterator<Item = (LineAddr, DirState)> + '_ {
        self.dir.iter().map(|(l, e)| (*l, e.state))
    }

    pub fn busy_lines(&self) -> usize {
        self.dir.values().filter(|e| e.busy.is_some() || !e.queue.is_empty()).count()
    }

    pub fn handle_request(&mut self, line: LineAddr, req: Request) -> Vec<DirAction> {
        self.stats.requests += 1;
        let e = self.dir.entry(line).or_default();
        if e.busy.is_some() {
            e.queue.push_back(req);
            self.stats.max_queue = self.stats.max_queue.max(e.queue.len() as u64);
            return Vec::new();
        }
        let mut out = Vec::new();
        self.start(line, req, &mut out);
        out
    }

    fn start(&mut self, line: LineAddr, req: Request, out: &mut Vec<DirAction>) {
        let failed = self.failed;
        if failed & bit(req.from) != 0 {
            self.stats.dropped_from_failed += 1;
            self.next_queued(line, out);
            return;
        }
        let e = self.dir.get_mut(&line).expect("entry exists");
        let holders = e.state.holders();
        let targets = match &req.kind {
            ReqKind::WbEvict(data) => {
                if e.state == DirState::Owned(req.from) {
                    if let Some(d) = data {
                        self.memory.insert(line, *d);
                    }
                    e.state = DirState::Uncached;
                } else {
                    self.stats.stale_writebacks += 1;
                }
                e.busy = Some(Txn { req, waiting: 0, hold: false, finishing: true });
                out.push(DirAction::FinishAfter { line, delay: SimTime::ZERO });
                return;
            }
            ReqKind::Rd => match e.state {
                DirState::Owned(o) if o != req.from => bit(o),
                _ => 0,
            },
            ReqKind::RdX | ReqKind::WtStore { .. } => holders & !bit(req.from),
        } & !failed;
        let downgrade = req.kind == ReqKind::Rd;
        e.busy = Some(Txn { req, waiting: targets, hold: false, finishing: false });
        for cn in members(targets) {
            self.stats.invalidations += 1;
            out.push(DirAction::Send { to: cn, body: Body::Inv { line, downgrade } });
        }
        if targets == 0 {
            self.complete(line, out);
        }
    }

    pub fn on_inv_ack(&mut self, line: LineAddr, from: u16, data: Option<LineData>) -> Vec<DirAction> {
        let mut out = Vec::new();
        let Some(e) = self.dir.get_mut(&line) else {
            self.stats.stale_acks += 1;
            return out;
        };
        match e.busy.as_mut() {
            Some(t) if !t.finishing && t.waiting & bit(from) != 0 => {
                t.waiting &= !bit(from);
                if let Some(d) = data {
                    self.memory.insert(line, d);
                }
                if t.waiting == 0 && !t.hold {
                    self.complete(line, &mut out);
                }
            }
            _ => self.stats.stale_acks += 1,
        }
        out
    }

    fn complete(&mut self, line: LineAddr, out: &mut Vec<DirAction>) {
        let failed = self.failed;
        let e = self.dir.get_mut(&line).expect("entry");
        let t = e.busy.as_mut().expect("busy");
        t.finishing = true;
        let from = t.req.from;
        let live_from = if failed & bit(from) != 0 { 0 } else { bit(from) };
        let delay = match &t.req.kind {
            ReqKind::Rd => {
                let had_owner = matches!(e.state, DirState::Owned(o) if o != from);
                let sharers = (e.state.holders() | live_from) & !failed;
                e.state = if sharers == 0 { DirState::Uncached } else { DirState::Shared(sharers) };
                if had_owner {
                    SimTime::ZERO
                } else {
                    self.dram
                }
            }
            ReqKind::RdX => {
                let had_owner = matches!(e.state, DirState::Owned(o) if o != from);
                e.state = if live_from != 0 { DirState::Owned(from) } else { DirState::Uncached };
                if had_owner {
                    SimTime::ZERO
                } else {
                    self.dram
                }
            }
            ReqKind::WtStore { mask, values, .. } => {
                let mut data = self.memory.get(&line).copied().unwrap_or([0; WORDS_PER_LINE]);
                for w in 0..WORDS_PER_LINE {
                    if mask & (1 << w) != 0 {
                        data[w] = values[w];
                    }
                }
                self.memory.insert(line, data);
                let keep = e.state.holders() & live_from;
                e.state = if keep != 0 { DirState::Shared(keep) } else { DirState::Uncached };
                self.dram + self.pmem
            }
            ReqKind::WbEvict(_) => SimTime::ZERO,
        };
        out.push(DirAction::FinishAfter { line, delay });
    }

    /// Sends the response of the line's finished transaction and starts the next queued one.
    pub fn finish(&mut self, line: LineAddr) -> Vec<DirAction> {
        let mut out = Vec::new();
        let data = self.line(line);
        let failed = self.failed;
        let e = self.dir.get_mut(&line).expect("entry");
        let t = e.busy.take().expect("finishing transaction");
        debug_assert!(t.finishing);
        let from = t.req.from;
        if failed & bit(from) != 0 {
            e.state = match e.state {
                DirState::Owned(o) if o == from => DirState::Uncached,
                DirState::Shared(s) if s & !bit(from) == 0 => DirState::Uncached,
                DirState::Shared(s) => DirState::Shared(s & !bit(from)),
                s => s,
            };
        } else {
            let body = match t.req.kind {
                ReqKind::Rd => Body::RdAck { line, data },
                ReqKind::RdX => Body::RdXAck { line, data },
                ReqKind::WbEvict(_) => Body::WbAck { line },
                ReqKind::WtStore { core, .. } => Body::WtAck { line, core },
            };
            out.push(DirAction::Send { to: from, body });
        }
        self.next_queued(line, &mut out);
        out
    }

    fn next_queued(&mut self, line: LineAddr, out: &mut Vec<DirAction>) {
        let e = self.dir.get_mut(&line).expect("entry");
        if e.busy.is_some() {
            return;
        }
        if let Some(next) = e.queue.pop_front() {
            self.start(line, next, out);
        }
    }

    /// First half of directory recovery: drop the victims as sharers, discard their queued
    /// requests and return the lines they owned. Transactions waiting only on victims
    /// complete; those on victim-owned lines are held until [`Self::apply_repair`].
    pub fn begin_recovery(&mut self, victims: CnMask) -> (Vec<LineAddr>, u64, Vec<DirAction>) {
        self.failed |= victims;
        let mut owned = Vec::new();
        let mut shared = 0;
        let mut to_complete = Vec::new();
        for (&line, e) in self.dir.iter_mut() {
            e.queue.retain(|r| victims & bit(r.from) == 0);
            match e.state {
                DirState::Shared(s) if s & victims != 0 => {
                    shared += 1;
                    let rest = s & !victims;
                    e.state = if rest == 0 { DirState::Uncached } else { DirState::Shared(rest) };
                }
                DirState::Owned(o) if victims & bit(o) != 0 => owned.push(line),
                _ => {}
            }
            if let Some(t) = e.busy.as_mut() {
                if !t.finishing {
                    t.waiting &= !victims;
                    if matches!(e.state, DirState::Owned(o) if victims & bit(o) != 0) {
                        t.hold = true;
                    } else if t.waiting == 0 {
                        to_complete.push(line);
                    }
                }
            }
        }
        let mut out = Vec::new();
        for line in to_complete {
            self.complete(line, &mut out);
        }
        (owned, shared, out)
    }

    /// Writes recovered words, marks the line uncached and releases any held transaction.
    pub fn apply_repair(&mut self, line: LineAddr, words: &[Option<u64>; WORDS_PER_LINE]) -> Vec<DirAction> {
        let mut data = self.line(line);
        for (w, v) in words.iter().enumerate() {
            if let Some(v) = v {
                data[w] = *v;
            }
        }
        self.memory.insert(line, data);
        let mut out = Vec::new();
        let e = self.dir.entry(line).or_default();
        e.state = DirState::Uncached;
        if let Some(t) = e.busy.as_mut() {
            if t.hold {
                t.hold = false;
                if t.waiting == 0 {
                    self.complete(line, &mut out);
                }
            }
        }
        out
    }

    pub fn apply_log_dump(&mut self, segment: Segment) {
        self.persisted.push(segment);
    }

    pub fn persisted_segments(&self) -> &[Segment] {
        &self.persisted
    }

    /// Persisted updates to one word, newest segment first, newest entry first within a segment.
    pub fn query_persisted(&self, line: LineAddr, word: usize) -> Vec<LogVersion> {
        let mut out = Vec::new();
        for seg in self.persisted.iter().rev() {
            if seg.entries.is_empty() || line < seg.first_line || line > seg.last_line {
                continue;
            }
            for e in seg.entries.iter().rev() {
                if e.line == line && e.word as usize == word {
                    out.push(LogVersion { core: e.core, txn: e.txn, value: e.value, from_sram: false });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mn() -> MemoryNode {
        MemoryNode::new(0, SimTime::from_ns(45), SimTime::from_ns(500))
    }

    fn finish_all(m: &mut MemoryNode, mut acts: Vec<DirAction>) -> Vec<(u16, Body)> {
        let mut sent = Vec::new();
        while let Some(a) = acts.pop() {
            match a {
                DirAction::Send { to, body } => sent.push((to, body)),
                DirAction::FinishAfter { line, .. } => acts.extend(m.finish(line)),
            }
        }
        sent
    }

    #[test]
    fn rd_on_uncached() {
        let mut m = mn();
        let acts = m.handle_request(0x40, Request { from: 3, kind: ReqKind::Rd });
        assert_eq!(acts, vec![DirAction::FinishAfter { line: 0x40, delay: SimTime::from_ns(45) }]);
        let sent = finish_all(&mut m, acts);
        assert_eq!(sent, vec![(3, Body::RdAck { line: 0x40, data: [0; 8] })]);
        assert_eq!(m.state(0x40), DirState::Shared(bit(3)));
    }

    #[test]
    fn rdx_on_shared_invalidates_then_acks() {
        let mut m = mn();
        for cn in [2, 5] {
            let a = m.handle_request(0x40, Request { from: cn, kind: ReqKind::Rd });
            finish_all(&mut m, a);
        }
        let acts = m.handle_request(0x40, Request { from: 7, kind: ReqKind::RdX });
        let invs: Vec<u16> = acts
            .iter()
            .filter_map(|a| match a {
                DirAction::Send { to, body: Body::Inv { .. } } => Some(*to),
                _ => None,
            })
            .collect();
        assert_eq!(invs, vec![2, 5]);
        assert!(m.on_inv_ack(0x40, 2, None).is_empty());
        let acts = m.on_inv_ack(0x40, 5, None);
        let sent = finish_all(&mut m, acts);
        assert!(matches!(sent[0], (7, Body::RdXAck { .. })));
        assert_eq!(m.state(0x40), DirState::Owned(7));
    }

    #[test]
    fn rdx_by_owner_is_immediate() {
        let mut m = mn();
        let a = m.handle_request(0x40, Request { from: 1, kind: ReqKind::RdX });
        finish_all(&mut m, a);
        let acts = m.handle_request(0x40, Request { from: 1, kind: ReqKind::RdX });
        assert!(acts.iter().all(|a| !matches!(a, DirAction::Send { body: Body::Inv { .. }, .. })));
        assert_eq!(m.state(0x40), DirState::Owned(1));
    }

    #[test]
    fn queued_request_waits_for_transaction() {
        let mut m = mn();
        let a = m.handle_request(0x40, Request { from: 1, kind: ReqKind::RdX });
        finish_all(&mut m, a);
        let acts = m.handle_request(0x40, Request { from: 2, kind: ReqKind::RdX });
        assert_eq!(acts, vec![DirAction::Send { to: 1, body: Body::Inv { line: 0x40, downgrade: false } }]);
        assert!(m.handle_request(0x40, Request { from: 3, kind: ReqKind::Rd }).is_empty());
        let data = [9; 8];
        let acts = m.on_inv_ack(0x40, 1, Some(data));
        let mut pending = VecDeque::from(acts);
        let mut sent = Vec::new();
        while let Some(a) = pending.pop_front() {
            match a {
                DirAction::Send { to, body } => sent.push((to, body)),
                DirAction::FinishAfter { line, .. } => pending.extend(m.finish(line)),
            }
        }
        assert_eq!(sent[0], (2, Body::RdXAck { line: 0x40, data }));
        // CN3's Rd now downgrades CN2.
        assert_eq!(sent[1], (2, Body::Inv { line: 0x40, downgrade: true }));
    }

    #[test]
    fn stale_writeback_is_acked_and_ignored() {
        let mut m = mn();
        let acts = m.handle_request(0x40, Request { from: 4, kind: ReqKind::WbEvict(Some([1; 8])) });
        let sent = finish_all(&mut m, acts);
        assert_eq!(sent, vec![(4, Body::WbAck { line: 0x40 })]);
        assert_eq!(m.line(0x40), [0; 8]);
        assert_eq!(m.stats.stale_writebacks, 1);
    }

    #[test]
    fn wt_store_persists() {
        let mut m = mn();
        let mut values = [0; 8];
        values[2] = 77;
        let acts = m.handle_request(0x80, Request { from: 0, kind: ReqKind::WtStore { core: 3, mask: 0b100, values } });
        assert_eq!(acts, vec![DirAction::FinishAfter { line: 0x80, delay: SimTime::from_ns(545) }]);
        assert_eq!(m.line(0x80)[2], 77);
    }

    #[test]
    fn recovery_drops_sharer_and_holds_owned() {
        let mut m = mn();
        for cn in [1, 4] {
            let a = m.handle_request(0x40, Request { from: cn, kind: ReqKind::Rd });
            finish_all(&mut m, a);
        }
        let a = m.handle_request(0x80, Request { from: 1, kind: ReqKind::RdX });
        finish_all(&mut m, a);
        // CN4 wants 0x80; the Inv to crashed CN1 is never answered.
        let a = m.handle_request(0x80, Request { from: 4, kind: ReqKind::RdX });
        assert_eq!(a.len(), 1);
        let (owned, shared, acts) = m.begin_recovery(bit(1));
        assert_eq!(owned, vec![0x80]);
        assert_eq!(shared, 1);
        assert!(acts.is_empty());
        assert_eq!(m.state(0x40), DirState::Shared(bit(4)));
        let mut words = [None; 8];
        words[0] = Some(5);
        let acts = m.apply_repair(0x80, &words);
        let sent = finish_all(&mut m, acts);
        let mut expect = [0; 8];
        expect[0] = 5;
        assert_eq!(sent, vec![(4, Body::RdXAck { line: 0x80, data: expect })]);
        assert_eq!(m.state(0x80), DirState::Owned(4));
        // Requests from the failed CN are ignored from now on.
        assert!(m.handle_request(0xc0, Request { from: 1, kind: ReqKind::RdX }).is_empty());
    }

    #[test]
    fn persisted_query_newest_first() {
        let mut m = mn();
        let seg = |round, value| Segment {
            round,
            source_cn: 0,
            first_line: 0x40,
            last_line: 0x40,
            compressed_bytes: 3,
            entries: vec![PersistedEntry { core: 0, txn: round, line: 0x40, word: 1, value }],
        };
        assert!(m.query_persisted(0x40, 1).is_empty());
        m.apply_log_dump(seg(1, 10));
        m.apply_log_dump(Segment { entries: vec![], ..seg(2, 0) });
        m.apply_log_dump(seg(3, 30));
        let got: Vec<u64> = m.query_persisted(0x40, 1).iter().map(|v| v.value).collect();
        assert_eq!(got, vec![30, 10]);
        assert_eq!(m.persisted_segments().len(), 3);
    }
}
