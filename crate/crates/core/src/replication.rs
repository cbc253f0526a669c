//! REPL / REPL_ACK / VAL bookkeeping on the requesting CN.

use serde::{Deserialize, Serialize};

use crate::addr::{line_number, LineAddr, LineData, WORDS_PER_LINE};
use crate::config::Protocol;
use crate::fabric::{DATA_MSG_BYTES, FLIT_BYTES};

/// Header bytes of a REPL: requester and core, line address, word mask, timestamp,
/// transaction tag. Five updated words still fit in one flit.
const REPL_HEADER_BYTES: u64 = 24;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplBody {
    pub requester_cn: u16,
    pub core: u32,
    /// Per-core transaction tag; lets a VAL name the REPL it validates.
    pub txn: u64,
    pub line: LineAddr,
    pub mask: u8,
    /// Full line of values; only words in `mask` are meaningful.
    pub values: LineData,
    /// Replica-map epoch the group was computed in.
    pub epoch: u32,
}

impl ReplBody {
    pub fn word_count(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn words(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        (0..WORDS_PER_LINE).filter(|w| self.mask & (1 << w) != 0).map(|w| (w, self.values[w]))
    }

    pub fn size_bytes(&self) -> u64 {
        if REPL_HEADER_BYTES + 8 * self.word_count() as u64 <= FLIT_BYTES {
            FLIT_BYTES
        } else {
            DATA_MSG_BYTES
        }
    }
}

/// The fixed hash: `Nr` consecutive CNs starting at `(line / 64) mod num_cns`.
pub fn select_replicas(line: LineAddr, num_cns: usize, nr: usize) -> Vec<u16> {
    let g = (line_number(line) % num_cns as u64) as usize;
    (0..nr.min(num_cns)).map(|i| ((g + i) % num_cns) as u16).collect()
}

/// Same walk as [`select_replicas`] but skipping CNs that are not live.
///
/// Removing CNs from `live` never evicts a surviving member from a group, so
/// groups only gain members when the live set shrinks.
pub fn select_live_replicas(line: LineAddr, live: &[bool], nr: usize) -> Vec<u16> {
    let n = live.len();
    let g = (line_number(line) % n as u64) as usize;
    (0..n).map(|i| (g + i) % n).filter(|&c| live[c]).take(nr).map(|c| c as u16).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplPhase {
    NotSent,
    ReplsSent,
    AcksComplete,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AckError {
    NotMember(u16),
    Duplicate(u16),
}

/// Replication state of one store-buffer slot once its REPLs are out.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotRepl {
    pub txn: u64,
    pub epoch: u32,
    pub group: Vec<u16>,
    pub sent: Vec<u16>,
    pub acked: Vec<u16>,
}

impl SlotRepl {
    pub fn new(txn: u64, epoch: u32, group: Vec<u16>) -> Self {
        Self { txn, epoch, sent: group.clone(), group, acked: Vec::new() }
    }

    pub fn on_ack(&mut self, from: u16) -> Result<bool, AckError> {
        if !self.group.contains(&from) {
            return Err(AckError::NotMember(from));
        }
        if self.acked.contains(&from) {
            return Err(AckError::Duplicate(from));
        }
        self.acked.push(from);
        Ok(self.complete())
    }

    pub fn complete(&self) -> bool {
        self.group.iter().all(|g| self.acked.contains(g))
    }

    pub fn phase(&self) -> ReplPhase {
        if self.complete() {
            ReplPhase::AcksComplete
        } else {
            ReplPhase::ReplsSent
        }
    }

    /// Moves the slot to a new group; returns members that still need a REPL.
    pub fn regroup(&mut self, epoch: u32, group: Vec<u16>) -> Vec<u16> {
        self.acked.retain(|m| group.contains(m));
        let fresh: Vec<u16> = group.iter().copied().filter(|m| !self.sent.contains(m)).collect();
        self.sent.extend(&fresh);
        self.group = group;
        self.epoch = epoch;
        fresh
    }
}

/// Per (source CN, destination CN) logical clocks carried on VALs.
#[derive(Clone, Debug)]
pub struct TsCounters {
    issued: Vec<u64>,
}

impl TsCounters {
    pub fn new(num_cns: usize) -> Self {
        Self { issued: vec![0; num_cns] }
    }

    /// Next timestamp for `dst`; the first is 1.
    pub fn next(&mut self, dst: u16) -> u64 {
        let c = &mut self.issued[dst as usize];
        *c += 1;
        *c
    }

    pub fn issued(&self, dst: u16) -> u64 {
        self.issued[dst as usize]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateBlock {
    Coherence,
    Replication,
}

/// Whether the SB head may commit.
pub fn commit_gate(protocol: Protocol, remote: bool, coherence_done: bool, acks_done: bool) -> Result<(), GateBlock> {
    if !remote {
        return Ok(());
    }
    if !coherence_done {
        return Err(GateBlock::Coherence);
    }
    if protocol.replicates() && !acks_done {
        return Err(GateBlock::Replication);
    }
    Ok(())
}

/// When a slot's REPLs go out, relative to the SB.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReplTrigger {
    /// At the head, once coherence has completed.
    HeadAfterCoherence,
    /// At the head, alongside coherence.
    Head,
    /// When the store is deposited into the SB.
    Deposit,
    /// When a later store fails to coalesce into the slot, or at the head.
    SealOrHead,
}

pub fn repl_trigger(protocol: Protocol, coalescing: bool) -> Option<ReplTrigger> {
    match protocol {
        Protocol::Wb | Protocol::Wt => None,
        Protocol::Baseline => Some(ReplTrigger::HeadAfterCoherence),
        Protocol::Parallel => Some(ReplTrigger::Head),
        Protocol::Proactive if coalescing => Some(ReplTrigger::SealOrHead),
        Protocol::Proactive => Some(ReplTrigger::Deposit),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replica_formula() {
        assert_eq!(select_replicas(0x1000, 16, 3), vec![0, 1, 2]);
        assert_eq!(select_replicas(0x1000, 16, 1), vec![0]);
        assert_eq!(select_replicas(0x1000, 16, 3), select_replicas(0x1008 & !63, 16, 3));
        assert_eq!(select_replicas(0x3c0, 16, 3), vec![15, 0, 1]);
    }

    #[test]
    fn live_walk_skips_dead_and_keeps_survivors() {
        let mut live = vec![true; 16];
        assert_eq!(select_live_replicas(0x1000, &live, 3), select_replicas(0x1000, 16, 3));
        live[1] = false;
        assert_eq!(select_live_replicas(0x1000, &live, 3), vec![0, 2, 3]);
    }

    #[test]
    fn ack_counting() {
        let mut s = SlotRepl::new(1, 0, vec![0, 1, 2]);
        assert_eq!(s.on_ack(0), Ok(false));
        assert_eq!(s.on_ack(2), Ok(false));
        assert_eq!(s.phase(), ReplPhase::ReplsSent);
        assert_eq!(s.on_ack(1), Ok(true));
        assert_eq!(s.phase(), ReplPhase::AcksComplete);
        assert_eq!(s.on_ack(1), Err(AckError::Duplicate(1)));
        assert_eq!(s.on_ack(7), Err(AckError::NotMember(7)));
    }

    #[test]
    fn regroup_sends_only_to_new_members() {
        let mut s = SlotRepl::new(1, 0, vec![0, 1, 2]);
        s.on_ack(0).unwrap();
        s.on_ack(2).unwrap();
        assert_eq!(s.regroup(1, vec![0, 2, 3]), vec![3]);
        assert!(!s.complete());
        assert_eq!(s.on_ack(3), Ok(true));
    }

    #[test]
    fn timestamps_start_at_one_without_gaps() {
        let mut t = TsCounters::new(4);
        assert_eq!((t.next(2), t.next(2), t.next(3), t.next(2)), (1, 2, 1, 3));
    }

    #[test]
    fn gate_conditions() {
        assert_eq!(commit_gate(Protocol::Parallel, true, false, true), Err(GateBlock::Coherence));
        assert_eq!(commit_gate(Protocol::Parallel, true, true, false), Err(GateBlock::Replication));
        assert_eq!(commit_gate(Protocol::Wb, true, true, false), Ok(()));
        assert_eq!(commit_gate(Protocol::Baseline, false, false, false), Ok(()));
    }

    #[test]
    fn repl_size() {
        let mut b = ReplBody { requester_cn: 0, core: 0, txn: 1, line: 0, mask: 0b1, values: [0; 8], epoch: 0 };
        assert_eq!(b.size_bytes(), 64);
        b.mask = 0b11111;
        assert_eq!(b.size_bytes(), 64);
        b.mask = 0b111111;
        assert_eq!(b.size_bytes(), 128);
    }
}
