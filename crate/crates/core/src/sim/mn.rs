//! Periodic log dumps from the Logging Units to the memory nodes.

use std::collections::BTreeMap;

use crate::addr::{home_mn, line_number};
use crate::directory::{PersistedEntry, Segment};
use crate::engine::ComponentId;
use crate::error::SimError;
use crate::fabric::{Body, Endpoint, Message};
use crate::logging::{dump_message_count, encode_entries, DramEntry};
use crate::replication::select_live_replicas;

use super::{DumpRound, Ev, Simulation};

impl Simulation {
    /// The unit that persists an entry: the line's rank-ordered group member, skipping
    /// units that are no longer live.
    fn designated_dumper(&self, e: &DramEntry) -> Option<u16> {
        let epoch = (e.epoch as usize).min(self.epochs.len() - 1);
        let group = select_live_replicas(e.line, &self.epochs[epoch], self.cfg.replication_factor);
        let live = self.live_now();
        let start = (line_number(e.line) % group.len() as u64) as usize;
        (0..group.len()).map(|i| group[(start + i) % group.len()]).find(|&m| live[m as usize])
    }

    pub(super) fn dump_tick(&mut self) -> Result<(), SimError> {
        let period = self.cfg.dump_period();
        let next = self.now() + period;
        self.queue.schedule_background(next, ComponentId::Harness, Ev::DumpTick)?;
        if self.recovery.is_some() || self.dump.is_some() {
            return Ok(());
        }
        self.dump_round_seq += 1;
        self.stats.dump_rounds += 1;
        let round = self.dump_round_seq;
        let participants: Vec<u16> =
            (0..self.cfg.num_cns as u16).filter(|&c| self.live_now()[c as usize] && !self.fabric.is_viral(c)).collect();
        for &cn in &participants {
            let dram: Vec<DramEntry> = self.cns[cn as usize].lu.dram_entries().to_vec();
            let mine: std::collections::HashSet<(u32, u64, u8)> =
                dram.iter().filter(|e| self.designated_dumper(e) == Some(cn)).map(DramEntry::key).collect();
            let picked = self.cns[cn as usize].lu.begin_dump(round, |e| mine.contains(&e.key()));
            let mut by_mn: BTreeMap<usize, Vec<DramEntry>> = BTreeMap::new();
            for e in picked {
                by_mn.entry(home_mn(e.line, self.cfg.num_mns)).or_default().push(e);
            }
            for (mn, entries) in by_mn {
                let raw = encode_entries(&entries);
                let compressed = self.compressor.compressed_len(&raw);
                let msgs = dump_message_count(compressed).max(1);
                let segment = Segment {
                    round,
                    source_cn: cn,
                    first_line: entries.iter().map(|e| e.line).min().unwrap_or(0),
                    last_line: entries.iter().map(|e| e.line).max().unwrap_or(0),
                    compressed_bytes: compressed,
                    entries: entries
                        .iter()
                        .map(|e| PersistedEntry {
                            core: e.core,
                            txn: e.txn,
                            line: e.line,
                            word: e.word,
                            value: e.value,
                        })
                        .collect(),
                };
                let mut segment = Some(Box::new(segment));
                for i in 0..msgs {
                    let seg = if i + 1 == msgs { segment.take() } else { None };
                    self.stats.dump_messages += 1;
                    self.send(Message::new(
                        Endpoint::Cn(cn),
                        Endpoint::Mn(mn as u16),
                        Body::LogDump { round, segment: seg },
                    ))?;
                }
            }
            self.send(Message::new(Endpoint::Cn(cn), Endpoint::Mn(0), Body::LogDumpDone { round }))?;
        }
        if !participants.is_empty() {
            self.dump = Some(DumpRound { round, pending: participants.clone(), participants });
        }
        Ok(())
    }

    pub(super) fn dump_done(&mut self, from: u16, round: u64) -> Result<(), SimError> {
        let Some(d) = self.dump.as_mut() else { return Ok(()) };
        if d.round != round {
            return Ok(());
        }
        d.pending.retain(|&c| c != from);
        if !d.pending.is_empty() {
            return Ok(());
        }
        let d = self.dump.take().expect("round");
        self.stats.dump_rounds_completed += 1;
        for cn in d.participants {
            self.send(Message::new(Endpoint::Mn(0), Endpoint::Cn(cn), Body::LogClearGrant { round }))?;
        }
        Ok(())
    }
}
