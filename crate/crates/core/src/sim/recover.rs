//! Crash injection, detection, the recovery manager and the memory-node side of
//! recovery, plus end-of-run verification.

use std::collections::BTreeMap;

use crate::addr::{is_remote, word_addr, LineAddr, WORDS_PER_LINE};
use crate::directory::{bit, DirState};
use crate::engine::{ComponentId, SimTime};
use crate::error::SimError;
use crate::fabric::{Body, Endpoint, Message, MsgKind, WordHistory};
use crate::logging::LogVersion;
use crate::node::{Mesi, Wait};
use crate::oracle::Mismatch;
use crate::recovery::{resolve_word, RecoveryReport};
use crate::replication::{select_live_replicas, ReplBody};

use super::{CmPhase, CmRun, Ev, MnRecovery, Simulation};

const RECOVERY_KINDS: [MsgKind; 8] = [
    MsgKind::Interrupt,
    MsgKind::InterruptResp,
    MsgKind::InitRecov,
    MsgKind::InitRecovResp,
    MsgKind::FetchLatestVers,
    MsgKind::FetchLatestVersResp,
    MsgKind::RecovEnd,
    MsgKind::RecovEndResp,
];

impl Simulation {
    fn recovery_msgs(&self) -> u64 {
        RECOVERY_KINDS.iter().map(|&k| self.fabric.kind_count(k)).sum()
    }

    pub(super) fn crash(&mut self, i: usize) -> Result<(), SimError> {
        self.crash_fired[i] = true;
        let now = self.now();
        let victims = self.crashes[i].victims.clone();
        for v in victims {
            let c = v as usize;
            if !self.cns[c].alive {
                continue;
            }
            self.cns[c].alive = false;
            self.crash_times.insert(v, now);
            for k in 0..self.cfg.cores_per_cn {
                let gid = self.cns[c].cores[k].gid as usize;
                if !self.finished[gid] {
                    self.finished[gid] = true;
                    self.unfinished -= 1;
                }
                for slot in self.cns[c].cores[k].sb.iter().filter(|s| s.remote) {
                    for (w, val) in slot.words() {
                        self.oracle.record_inflight(word_addr(slot.line, w), val);
                    }
                }
            }
            let at = now + SimTime::from_ns(self.cfg.detect_timeout_ns);
            self.schedule(at, ComponentId::Switch, Ev::Detect(v))?;
        }
        Ok(())
    }

    pub(super) fn detect(&mut self, v: u16) -> Result<(), SimError> {
        if !self.fabric.set_viral(v) {
            return Ok(());
        }
        let cm = (0..self.cfg.num_cns as u16)
            .find(|&c| !self.fabric.is_viral(c))
            .ok_or_else(|| SimError::RecoveryTimeout("no surviving compute node".into()))?;
        self.send(Message::new(Endpoint::Switch, Endpoint::Cn(cm), Body::Msi { victim: v }))
    }

    pub(super) fn cm_msi(&mut self, cm: u16, victim: u16) -> Result<(), SimError> {
        if let Some(run) = self.recovery.as_mut() {
            // A unit that died after this recovery started will never answer it; the next
            // recovery handles it.
            if !run.victims.contains(&victim) && run.pending.contains(&victim) && run.phase != CmPhase::Init {
                run.pending.retain(|&c| c != victim);
                run.live.retain(|&c| c != victim);
                if run.pending.is_empty() {
                    return self.cm_advance();
                }
            }
            return Ok(());
        }
        self.start_recovery(cm)
    }

    fn start_recovery(&mut self, cm: u16) -> Result<(), SimError> {
        let n = self.cfg.num_cns as u16;
        let victims: Vec<u16> = (0..n).filter(|&c| self.fabric.is_viral(c) && !self.recovered[c as usize]).collect();
        if victims.is_empty() {
            return Ok(());
        }
        let live: Vec<u16> = (0..n).filter(|&c| !self.fabric.is_viral(c)).collect();
        self.recovery_seq += 1;
        let id = self.recovery_seq;
        let report = RecoveryReport {
            id,
            cm_cn: cm,
            crash_time_ps: victims.iter().filter_map(|v| self.crash_times.get(v)).map(|t| t.ps()).min().unwrap_or(0),
            msi_time_ps: self.now().ps(),
            live_cns: live.len() as u64,
            num_mns: self.cfg.num_mns as u64,
            victims: victims.clone(),
            ..Default::default()
        };
        self.recovery = Some(CmRun {
            cm,
            victims,
            live: live.clone(),
            phase: CmPhase::Interrupt,
            pending: live.clone(),
            report,
            recovery_msgs_before: self.recovery_msgs(),
        });
        for c in live {
            self.send(Message::new(Endpoint::Cn(cm), Endpoint::Cn(c), Body::Interrupt { recovery: id }))?;
        }
        Ok(())
    }

    pub(super) fn cn_interrupt(&mut self, c: u16, src: Endpoint, recovery: u64) -> Result<(), SimError> {
        self.cns[c as usize].paused = true;
        let at = self.now() + SimTime::from_ns(self.cfg.recovery_handler_ns);
        self.send_at(at, Message::new(Endpoint::Cn(c), src, Body::InterruptResp { recovery }))
    }

    fn active_run(&mut self, recovery: u64, phase: CmPhase) -> Option<&mut CmRun> {
        let id_ok = self.recovery.as_ref().is_some_and(|r| r.report.id == recovery && r.phase == phase);
        if id_ok {
            self.recovery.as_mut()
        } else {
            None
        }
    }

    pub(super) fn cm_interrupt_resp(&mut self, src: Endpoint, recovery: u64) -> Result<(), SimError> {
        let Endpoint::Cn(c) = src else { return Ok(()) };
        let Some(run) = self.active_run(recovery, CmPhase::Interrupt) else { return Ok(()) };
        run.pending.retain(|&x| x != c);
        if run.pending.is_empty() {
            self.cm_advance()?;
        }
        Ok(())
    }

    pub(super) fn cm_init_resp(
        &mut self,
        src: Endpoint,
        recovery: u64,
        owned: u64,
        shared: u64,
        repaired: u64,
        fetches: u64,
    ) -> Result<(), SimError> {
        let Endpoint::Mn(m) = src else { return Ok(()) };
        let Some(run) = self.active_run(recovery, CmPhase::Init) else { return Ok(()) };
        run.report.owned_lines += owned;
        run.report.shared_lines += shared;
        run.report.repaired_words += repaired;
        run.report.fetch_messages += fetches;
        run.pending.retain(|&x| x != m);
        if run.pending.is_empty() {
            self.cm_advance()?;
        }
        Ok(())
    }

    pub(super) fn cm_end_resp(&mut self, src: Endpoint, recovery: u64) -> Result<(), SimError> {
        let Endpoint::Cn(c) = src else { return Ok(()) };
        let Some(run) = self.active_run(recovery, CmPhase::End) else { return Ok(()) };
        run.pending.retain(|&x| x != c);
        if run.pending.is_empty() {
            self.cm_advance()?;
        }
        Ok(())
    }

    /// Moves the recovery to its next phase once every response is in.
    fn cm_advance(&mut self) -> Result<(), SimError> {
        let now = self.now();
        let run = self.recovery.as_mut().expect("active recovery");
        let (cm, id) = (run.cm, run.report.id);
        match run.phase {
            CmPhase::Interrupt => {
                run.report.interrupt_done_ps = now.ps();
                run.phase = CmPhase::Init;
                run.pending = (0..self.cfg.num_mns as u16).collect();
                let victims = run.victims.clone();
                for m in 0..self.cfg.num_mns as u16 {
                    let body = Body::InitRecov { recovery: id, victims: victims.clone() };
                    self.send(Message::new(Endpoint::Cn(cm), Endpoint::Mn(m), body))?;
                }
            }
            CmPhase::Init => {
                run.report.init_done_ps = now.ps();
                run.phase = CmPhase::End;
                run.pending = run.live.clone();
                let victims = run.victims.clone();
                let live = run.live.clone();
                self.install_epoch(&victims)?;
                for c in live {
                    let body = Body::RecovEnd { recovery: id, victims: victims.clone() };
                    self.send(Message::new(Endpoint::Cn(cm), Endpoint::Cn(c), body))?;
                }
            }
            CmPhase::End => {
                let mut run = self.recovery.take().expect("active recovery");
                run.report.end_done_ps = now.ps();
                run.report.messages = self.recovery_msgs() - run.recovery_msgs_before;
                for &v in &run.victims {
                    self.recovered[v as usize] = true;
                }
                self.reports.push(run.report);
                self.start_recovery(cm)?;
            }
        }
        Ok(())
    }

    /// Drops the victims from the live set and from lock and barrier bookkeeping.
    fn install_epoch(&mut self, victims: &[u16]) -> Result<(), SimError> {
        let mut live = self.live_now().to_vec();
        for &v in victims {
            live[v as usize] = false;
        }
        self.epochs.push(live);
        let per = self.cfg.cores_per_cn as u32;
        let dead = |g: u32| victims.contains(&((g / per) as u16));
        let mut wake = Vec::new();
        for lock in self.locks.values_mut() {
            lock.waiters.retain(|&g| !dead(g));
            if lock.holder.is_some_and(dead) {
                lock.holder = None;
                if let Some(w) = lock.waiters.pop_front() {
                    wake.push(w);
                }
            }
        }
        let now = self.now();
        for w in wake {
            self.wake(w, now)?;
        }
        let keys: Vec<(u32, u32)> = self.barriers.keys().copied().collect();
        for key in keys {
            if let Some(arrived) = self.barriers.get_mut(&key) {
                arrived.retain(|&g| !dead(g));
            }
            self.try_release_barrier(key)?;
        }
        self.dump = None;
        for cn in &mut self.cns {
            cn.lu.cancel_dump();
        }
        Ok(())
    }

    pub(super) fn cn_recov_end(
        &mut self,
        c16: u16,
        src: Endpoint,
        recovery: u64,
        victims: Vec<u16>,
    ) -> Result<(), SimError> {
        let c = c16 as usize;
        self.cns[c].lu.gc_requesters(&victims);
        self.lu_admit_backlog(c16)?;
        let epoch = self.epoch();
        let live = self.live_now().to_vec();
        let nr = self.cfg.replication_factor;
        let now = self.now();
        for k in 0..self.cfg.cores_per_cn {
            let gid = self.cns[c].cores[k].gid;
            let mut resend = Vec::new();
            for slot in self.cns[c].cores[k].sb.iter_mut() {
                let Some(r) = slot.repl.as_mut() else { continue };
                let group = select_live_replicas(slot.line, &live, nr);
                if group == r.group {
                    continue;
                }
                let fresh = r.regroup(epoch, group);
                let body = ReplBody {
                    requester_cn: c16,
                    core: gid,
                    txn: r.txn,
                    line: slot.line,
                    mask: slot.mask,
                    values: slot.values,
                    epoch,
                };
                resend.extend(fresh.into_iter().map(|m| (m, body.clone())));
            }
            for (m, body) in resend {
                self.stats.repl_resent += 1;
                self.send(Message::new(Endpoint::Cn(c16), Endpoint::Cn(m), Body::Repl(body)))?;
            }
        }
        self.cns[c].paused = false;
        for k in 0..self.cfg.cores_per_cn {
            let core = &mut self.cns[c].cores[k];
            let gid = core.gid;
            let resume = core.parked && core.wait == Wait::None;
            core.parked = false;
            let drain = !core.sb.is_empty();
            if resume {
                self.schedule_step(gid, now)?;
            }
            if drain {
                self.kick_drain(gid)?;
            }
        }
        self.send(Message::new(Endpoint::Cn(c16), src, Body::RecovEndResp { recovery }))
    }

    /// Every live unit that may hold log entries for `line`: members of its group in any epoch.
    fn log_holders(&self, line: LineAddr) -> Vec<u16> {
        let mut out = Vec::new();
        for live in &self.epochs {
            for m in select_live_replicas(line, live, self.cfg.replication_factor) {
                if !self.fabric.is_viral(m) && !out.contains(&m) {
                    out.push(m);
                }
            }
        }
        out
    }

    /// Rank of a unit in the line's replica group, newest epoch first.
    fn rank(&self, line: LineAddr, cn: u16) -> usize {
        let nr = self.cfg.replication_factor;
        for (i, live) in self.epochs.iter().rev().enumerate() {
            if let Some(p) = select_live_replicas(line, live, nr).iter().position(|&m| m == cn) {
                return i * nr + p;
            }
        }
        usize::MAX
    }

    pub(super) fn mn_init_recov(&mut self, m: u16, cm: u16, recovery: u64, victims: Vec<u16>) -> Result<(), SimError> {
        let mask = victims.iter().fold(0, |acc, &v| acc | bit(v));
        let (owned, shared, acts) = self.mns[m as usize].begin_recovery(mask);
        self.dir_actions(m, acts)?;
        let mut targets: BTreeMap<u16, Vec<LineAddr>> = BTreeMap::new();
        for &line in &owned {
            for h in self.log_holders(line) {
                targets.entry(h).or_default().push(line);
            }
        }
        self.mn_recovery[m as usize] = Some(MnRecovery {
            id: recovery,
            cm,
            owned,
            pending: targets.keys().copied().collect(),
            responses: BTreeMap::new(),
            shared,
            fetches: targets.len() as u64,
            invalid_skipped: 0,
        });
        if targets.is_empty() {
            return self.mn_resolve(m);
        }
        for (t, lines) in targets {
            self.send(Message::new(Endpoint::Mn(m), Endpoint::Cn(t), Body::FetchLatestVers { recovery, lines }))?;
        }
        Ok(())
    }

    pub(super) fn mn_fetch_resp(
        &mut self,
        m: u16,
        from: u16,
        recovery: u64,
        lines: Vec<(LineAddr, Vec<WordHistory>)>,
        invalid: u64,
    ) -> Result<(), SimError> {
        let ranks: Vec<usize> = lines.iter().map(|(l, _)| self.rank(*l, from)).collect();
        let Some(rec) = self.mn_recovery[m as usize].as_mut().filter(|r| r.id == recovery) else { return Ok(()) };
        for ((line, hist), rank) in lines.into_iter().zip(ranks) {
            rec.responses.entry(line).or_default().push((rank, from, hist));
        }
        rec.invalid_skipped += invalid;
        rec.pending.retain(|&c| c != from);
        if rec.pending.is_empty() {
            self.mn_resolve(m)?;
        }
        Ok(())
    }

    /// Picks each word of every victim-owned line from the fetched logs, writes it to
    /// memory and releases the directory entry.
    fn mn_resolve(&mut self, m: u16) -> Result<(), SimError> {
        let mut rec = self.mn_recovery[m as usize].take().expect("recovery state");
        let mut repaired = 0;
        let mut mismatches = 0;
        for &line in &rec.owned {
            let resp = rec.responses.entry(line).or_default();
            resp.sort_by_key(|(rank, cn, _)| (*rank, *cn));
            let mut words = [None; WORDS_PER_LINE];
            for (w, slot) in words.iter_mut().enumerate() {
                let lists: Vec<(usize, &[LogVersion])> = resp.iter().map(|(r, _, h)| (*r, h[w].as_slice())).collect();
                let persisted = self.mns[m as usize].query_persisted(line, w);
                *slot = resolve_word(&lists, &persisted).value();
            }
            let memory = self.mns[m as usize].line(line);
            for (w, v) in words.iter().enumerate() {
                let addr = word_addr(line, w);
                let found = v.unwrap_or(memory[w]);
                if !self.oracle.allowed(addr, found) {
                    mismatches += 1;
                    let expected = self.oracle.expected(addr);
                    self.verify.mismatch(Mismatch { addr, expected, found, context: format!("recovery {}", rec.id) });
                }
            }
            repaired += words.iter().flatten().count() as u64;
            let acts = self.mns[m as usize].apply_repair(line, &words);
            self.dir_actions(m, acts)?;
        }
        if let Some(run) = self.recovery.as_mut().filter(|r| r.report.id == rec.id) {
            run.report.invalid_entries_skipped += rec.invalid_skipped;
            run.report.repair_mismatches += mismatches;
        }
        let at = if rec.owned.is_empty() { self.now() } else { self.now() + SimTime::from_ns(self.cfg.dram_ns) };
        let body = Body::InitRecovResp {
            recovery: rec.id,
            owned_lines: rec.owned.len() as u64,
            shared_lines: rec.shared,
            repaired_words: repaired,
            fetches: rec.fetches,
        };
        self.send_at(at, Message::new(Endpoint::Mn(m), Endpoint::Cn(rec.cm), body))
    }

    /// Compares the final image with the golden history and checks directory hygiene.
    pub(super) fn final_verification(&mut self) {
        let mut report = std::mem::take(&mut self.verify);
        self.oracle.verify_image(|a| self.word_value(a), &mut report, "final");
        if let Some(run) = &self.recovery {
            report.residue(format!("recovery {} still in phase {:?}", run.report.id, run.phase));
        }
        let dead: Vec<bool> = self.cns.iter().map(|c| !c.alive).collect();
        for mn in &self.mns {
            if mn.busy_lines() > 0 {
                report.residue(format!("MN{} still has {} lines in transition", mn.id, mn.busy_lines()));
            }
            for (line, st) in mn.entries() {
                match st {
                    DirState::Owned(o) if dead[o as usize] => {
                        report.residue(format!("line {line:#x} still owned by crashed CN{o}"))
                    }
                    DirState::Shared(s) if dead.iter().enumerate().any(|(c, &d)| d && s & bit(c as u16) != 0) => {
                        report.residue(format!("line {line:#x} still shared by a crashed CN"))
                    }
                    _ => {}
                }
            }
        }
        let mut owners: BTreeMap<LineAddr, Vec<u16>> = BTreeMap::new();
        for cn in self.cns.iter().filter(|c| c.alive) {
            for (line, l) in cn.llc.iter() {
                if is_remote(line) && matches!(l.state, Mesi::M | Mesi::E) {
                    owners.entry(line).or_default().push(cn.id);
                }
            }
        }
        for (line, cns) in owners {
            if cns.len() > 1 {
                report.multiple_owner(format!("line {line:#x} owned by CNs {cns:?}"));
            }
            let home = &self.mns[crate::addr::home_mn(line, self.cfg.num_mns)];
            if home.state(line) != DirState::Owned(cns[0]) {
                report.multiple_owner(format!(
                    "line {line:#x} held by CN{} but directory says {:?}",
                    cns[0],
                    home.state(line)
                ));
            }
        }
        self.verify = report;
    }
}
