//! Compute-node side: core stepping, SB draining, the cache agent, and the
//! Logging Unit's REPL/VAL handling.

use crate::addr::{barrier_line, is_remote, line_of, lock_line, word_addr, word_index, LineAddr, LineData};
use crate::config::Protocol;
use crate::engine::{ComponentId, SimTime};
use crate::error::SimError;
use crate::fabric::{Body, Endpoint, Message};
use crate::logging::LogError;
use crate::node::{deposit, Deposit, LlcLine, Mesi, Mshr, Wait};
use crate::recovery::CrashTrigger;
use crate::replication::{commit_gate, select_live_replicas, AckError, ReplBody, ReplTrigger};
use crate::trace::TraceOp;
use crate::workload::store_value;

use super::{Ev, LockState, Simulation};

impl Simulation {
    fn cycles(&self, n: u64) -> SimTime {
        self.cfg.core_cycles(n)
    }

    pub(super) fn schedule_step(&mut self, gid: u32, at: SimTime) -> Result<(), SimError> {
        let (c, k) = self.split(gid);
        let core = &mut self.cns[c].cores[k];
        if core.step_pending {
            return Ok(());
        }
        core.step_pending = true;
        self.schedule(at, ComponentId::Core(gid), Ev::Step(gid))
    }

    pub(super) fn kick_drain_at(&mut self, gid: u32, at: SimTime) -> Result<(), SimError> {
        let (c, k) = self.split(gid);
        let core = &mut self.cns[c].cores[k];
        if core.drain_pending {
            return Ok(());
        }
        core.drain_pending = true;
        self.schedule(at, ComponentId::Core(gid), Ev::Drain(gid))
    }

    pub(super) fn kick_drain(&mut self, gid: u32) -> Result<(), SimError> {
        let now = self.now();
        self.kick_drain_at(gid, now)
    }

    /// Clears a wait, charging the waited time, and resumes the core at `at`.
    pub(super) fn wake(&mut self, gid: u32, at: SimTime) -> Result<(), SimError> {
        let now = self.now();
        let (c, k) = self.split(gid);
        let core = &mut self.cns[c].cores[k];
        let waited = now.saturating_sub(core.wait_since).ps();
        match core.wait {
            Wait::SbFull => core.stats.sb_full_stall_ps += waited,
            Wait::Drain | Wait::SyncLine(_) | Wait::LockQueue(_) | Wait::Barrier => core.stats.sync_wait_ps += waited,
            _ => {}
        }
        core.wait = Wait::None;
        self.schedule_step(gid, at)
    }

    fn block(&mut self, gid: u32, wait: Wait) {
        let now = self.now();
        let (c, k) = self.split(gid);
        let core = &mut self.cns[c].cores[k];
        core.wait = wait;
        core.wait_since = now;
    }

    pub(super) fn step_core(&mut self, gid: u32) -> Result<(), SimError> {
        let now = self.now();
        let (c, k) = self.split(gid);
        let cn = &mut self.cns[c];
        if !cn.alive {
            return Ok(());
        }
        let paused = cn.paused;
        let core = &mut cn.cores[k];
        core.step_pending = false;
        if paused {
            core.parked = true;
            return Ok(());
        }
        if core.wait != Wait::None {
            return Ok(());
        }
        let ops = &self.trace.cores[gid as usize];
        let Some(&op) = ops.get(core.pc) else {
            core.wait = Wait::Done;
            core.stats.done_at_ps = now.ps();
            self.mark_finished(gid);
            return Ok(());
        };
        match op {
            TraceOp::Compute { cycles } => {
                core.pc += 1;
                core.stats.ops += 1;
                let at = now + self.cycles(cycles as u64);
                self.schedule_step(gid, at)
            }
            TraceOp::Load { addr, remote } => self.do_load(gid, addr, remote),
            TraceOp::Store { addr, remote } => self.do_store(gid, addr, remote),
            TraceOp::LockAcq { .. } | TraceOp::LockRel { .. } | TraceOp::Barrier { .. } => self.do_sync(gid, op),
        }
    }

    fn finish_load(&mut self, gid: u32, latency: SimTime) -> Result<(), SimError> {
        let (c, k) = self.split(gid);
        let core = &mut self.cns[c].cores[k];
        core.pc += 1;
        core.stats.ops += 1;
        core.stats.loads += 1;
        core.stats.load_latency_ps += latency.ps();
        *self.load_hist.entry(latency.ps() / 1000).or_default() += 1;
        let at = self.now() + latency;
        self.schedule_step(gid, at)
    }

    fn do_load(&mut self, gid: u32, addr: u64, remote: bool) -> Result<(), SimError> {
        let (c, k) = self.split(gid);
        let line = line_of(addr);
        let l1_lat = self.cycles(self.cfg.l1.latency_cycles);
        let llc_lat = self.cycles(self.cfg.llc.latency_cycles);
        let cn = &mut self.cns[c];
        if cn.llc.touch(line) {
            let lat = if cn.l1[k].touch(line) {
                l1_lat
            } else {
                cn.l1[k].insert(line, ());
                llc_lat
            };
            return self.finish_load(gid, lat);
        }
        if !remote {
            let lat = llc_lat + SimTime::from_ns(self.cfg.dram_ns);
            self.install(c, line, LlcLine { state: Mesi::E, data: [0; 8] })?;
            self.cns[c].l1[k].insert(line, ());
            return self.finish_load(gid, lat);
        }
        let core = &mut self.cns[c].cores[k];
        core.pc += 1;
        core.stats.ops += 1;
        core.stats.remote_loads += 1;
        self.block(gid, Wait::Load(line));
        self.request_line(c, line, false)
    }

    fn do_store(&mut self, gid: u32, addr: u64, remote: bool) -> Result<(), SimError> {
        let (c, k) = self.split(gid);
        let line = line_of(addr);
        let word = word_index(addr);
        let protocol = self.protocol();
        if remote && protocol != Protocol::Wt && !self.cns[c].owns(line) {
            self.request_line(c, line, true)?;
        }
        let cap = self.cfg.sb_entries;
        let coalescing = self.cfg.coalescing_enabled;
        let now = self.now();
        let core = &mut self.cns[c].cores[k];
        let value = store_value(gid as usize, core.pc);
        match deposit(&mut core.sb, cap, coalescing, line, word, value, remote, now) {
            Deposit::Full => {
                self.block(gid, Wait::SbFull);
                return Ok(());
            }
            Deposit::Merged => core.stats.coalesced += 1,
            Deposit::Appended => {
                let idx = core.sb.len() - 1;
                match self.trigger {
                    Some(ReplTrigger::Deposit) => self.issue_repl(gid, idx, idx == 0)?,
                    Some(ReplTrigger::SealOrHead) if idx > 0 => self.issue_repl(gid, idx - 1, idx == 1)?,
                    _ => {}
                }
            }
        }
        let core = &mut self.cns[c].cores[k];
        core.pc += 1;
        core.stats.ops += 1;
        core.stats.stores += 1;
        if remote {
            core.stats.remote_stores += 1;
        }
        core.stats.max_sb = core.stats.max_sb.max(core.sb.len() as u64);
        self.kick_drain(gid)?;
        let at = now + self.cycles(1);
        self.schedule_step(gid, at)
    }

    fn do_sync(&mut self, gid: u32, op: TraceOp) -> Result<(), SimError> {
        let (c, k) = self.split(gid);
        if !self.cns[c].cores[k].sb_empty() {
            self.block(gid, Wait::Drain);
            return self.kick_drain(gid);
        }
        let line = match op {
            TraceOp::LockAcq { sync_id } | TraceOp::LockRel { sync_id } => lock_line(sync_id),
            TraceOp::Barrier { sync_id } => barrier_line(sync_id),
            _ => unreachable!("not a sync op"),
        };
        if !self.cns[c].owns(line) {
            self.block(gid, Wait::SyncLine(line));
            return self.request_line(c, line, true);
        }
        self.cns[c].llc.touch(line);
        let next = self.now() + self.cycles(1);
        match op {
            TraceOp::LockAcq { sync_id } => {
                let lock = self
                    .locks
                    .entry(sync_id)
                    .or_insert_with(|| LockState { holder: None, waiters: Default::default() });
                if lock.holder.is_none() {
                    lock.holder = Some(gid);
                    self.advance(gid);
                    self.schedule_step(gid, next)
                } else {
                    lock.waiters.push_back(gid);
                    self.block(gid, Wait::LockQueue(sync_id));
                    Ok(())
                }
            }
            TraceOp::LockRel { sync_id } => {
                let lock = self.locks.get_mut(&sync_id);
                let woken = match lock {
                    Some(l) if l.holder == Some(gid) => {
                        l.holder = None;
                        l.waiters.pop_front()
                    }
                    _ => {
                        return Err(SimError::ProtocolViolation(format!(
                            "core {gid} released lock {sync_id} it does not hold"
                        )))
                    }
                };
                self.advance(gid);
                if let Some(w) = woken {
                    let now = self.now();
                    self.wake(w, now)?;
                }
                self.schedule_step(gid, next)
            }
            TraceOp::Barrier { sync_id } => {
                let core = &mut self.cns[c].cores[k];
                let seen = core.barrier_seen.entry(sync_id).or_insert(0);
                let key = (sync_id, *seen);
                *seen += 1;
                self.advance(gid);
                self.block(gid, Wait::Barrier);
                self.barriers.entry(key).or_default().push(gid);
                self.try_release_barrier(key)
            }
            _ => unreachable!("not a sync op"),
        }
    }

    fn advance(&mut self, gid: u32) {
        let (c, k) = self.split(gid);
        let core = &mut self.cns[c].cores[k];
        core.pc += 1;
        core.stats.ops += 1;
    }

    pub(super) fn try_release_barrier(&mut self, key: (u32, u32)) -> Result<(), SimError> {
        let live = self.live_now().iter().filter(|&&l| l).count() * self.cfg.cores_per_cn;
        let arrived = self.barriers.get(&key).map_or(0, Vec::len);
        if arrived < live {
            return Ok(());
        }
        let cores = self.barriers.remove(&key).unwrap_or_default();
        let at = self.now() + self.cycles(1);
        for g in cores {
            let (c, _) = self.split(g);
            if self.cns[c].alive {
                self.wake(g, at)?;
            }
        }
        Ok(())
    }

    // --- cache agent ---

    pub(super) fn request_line(&mut self, c: usize, line: LineAddr, exclusive: bool) -> Result<(), SimError> {
        let cn = &mut self.cns[c];
        if let Some(m) = cn.mshr.get_mut(&line) {
            if exclusive && !m.exclusive {
                m.upgrade = true;
            }
            return Ok(());
        }
        let deferred = cn.wb_buffer.contains_key(&line);
        cn.mshr.insert(line, Mshr { exclusive, upgrade: false, sent: !deferred });
        if deferred {
            return Ok(());
        }
        self.send_request(c, line, exclusive)
    }

    fn send_request(&mut self, c: usize, line: LineAddr, exclusive: bool) -> Result<(), SimError> {
        self.cns[c].stats.requests_sent += 1;
        let body = if exclusive { Body::RdX { line } } else { Body::Rd { line } };
        let dst = self.home(line);
        self.send(Message::new(Endpoint::Cn(c as u16), dst, body))
    }

    /// Inserts a line into the LLC, writing back whatever it displaces.
    fn install(&mut self, c: usize, line: LineAddr, entry: LlcLine) -> Result<(), SimError> {
        let cn = &mut self.cns[c];
        let Some((victim, old)) = cn.llc.insert(line, entry) else { return Ok(()) };
        cn.drop_from_l1s(victim);
        cn.stats.llc_evictions += 1;
        if !is_remote(victim) {
            return Ok(());
        }
        let data = match old.state {
            Mesi::S => return Ok(()),
            Mesi::M => Some(old.data),
            Mesi::E => None,
        };
        cn.wb_buffer.insert(victim, data);
        cn.stats.writebacks += 1;
        let dst = self.home(victim);
        self.send(Message::new(Endpoint::Cn(c as u16), dst, Body::WbEvict { line: victim, data }))
    }

    pub(super) fn fill(&mut self, c16: u16, line: LineAddr, exclusive: bool, data: LineData) -> Result<(), SimError> {
        let c = c16 as usize;
        let mshr = self.cns[c].mshr.remove(&line);
        let entry = match self.cns[c].llc.get(line) {
            Some(l) if l.state == Mesi::M => l.clone(),
            _ => LlcLine { state: if exclusive { Mesi::E } else { Mesi::S }, data },
        };
        if let Some(l) = self.cns[c].llc.get_mut(line) {
            *l = entry;
        } else {
            self.install(c, line, entry)?;
        }
        if let Some(m) = mshr {
            if m.upgrade && !exclusive {
                self.request_line(c, line, true)?;
            }
        }
        let now = self.now();
        let llc_lat = self.cycles(self.cfg.llc.latency_cycles);
        let per = self.cfg.cores_per_cn;
        for k in 0..per {
            let gid = (c * per + k) as u32;
            let core = &mut self.cns[c].cores[k];
            match core.wait {
                Wait::Load(l) if l == line => {
                    let latency = now.saturating_sub(core.wait_since) + llc_lat;
                    core.stats.loads += 1;
                    core.stats.load_latency_ps += latency.ps();
                    *self.load_hist.entry(latency.ps() / 1000).or_default() += 1;
                    self.cns[c].l1[k].insert(line, ());
                    self.wake(gid, now + llc_lat)?;
                }
                Wait::SyncLine(l) if l == line => self.wake(gid, now)?,
                _ => {}
            }
            if self.cns[c].cores[k].sb.front().is_some_and(|s| s.line == line) {
                self.kick_drain(gid)?;
            }
        }
        Ok(())
    }

    pub(super) fn on_inv(&mut self, c16: u16, src: Endpoint, line: LineAddr, downgrade: bool) -> Result<(), SimError> {
        let cn = &mut self.cns[c16 as usize];
        cn.stats.invalidations_received += 1;
        let data = if let Some(l) = cn.llc.get_mut(line) {
            let d = (l.state == Mesi::M).then_some(l.data);
            if downgrade {
                l.state = Mesi::S;
            } else {
                cn.llc.remove(line);
                cn.drop_from_l1s(line);
            }
            d
        } else {
            cn.wb_buffer.get(&line).copied().flatten()
        };
        self.send(Message::new(Endpoint::Cn(c16), src, Body::InvAck { line, data }))
    }

    pub(super) fn on_wb_ack(&mut self, c16: u16, line: LineAddr) -> Result<(), SimError> {
        let c = c16 as usize;
        self.cns[c].wb_buffer.remove(&line);
        if let Some(m) = self.cns[c].mshr.get_mut(&line) {
            if !m.sent {
                m.sent = true;
                let excl = m.exclusive;
                return self.send_request(c, line, excl);
            }
        }
        Ok(())
    }

    // --- store buffer drain ---

    pub(super) fn issue_repl(&mut self, gid: u32, idx: usize, at_head: bool) -> Result<(), SimError> {
        let (c, k) = self.split(gid);
        let epoch = self.epoch();
        let nr = self.cfg.replication_factor;
        let group_live = self.epochs.last().expect("epoch").clone();
        let core = &mut self.cns[c].cores[k];
        let slot = &mut core.sb[idx];
        if !slot.remote || slot.repl.is_some() {
            return Ok(());
        }
        let group = select_live_replicas(slot.line, &group_live, nr);
        let txn = core.next_txn;
        core.next_txn += 1;
        slot.repl = Some(crate::replication::SlotRepl::new(txn, epoch, group.clone()));
        let body = ReplBody {
            requester_cn: c as u16,
            core: gid,
            txn,
            line: slot.line,
            mask: slot.mask,
            values: slot.values,
            epoch,
        };
        self.stats.repl_transactions += 1;
        if at_head {
            self.stats.repl_at_head += 1;
        }
        for m in group {
            self.send(Message::new(Endpoint::Cn(c as u16), Endpoint::Cn(m), Body::Repl(body.clone())))?;
        }
        Ok(())
    }

    pub(super) fn drain(&mut self, gid: u32) -> Result<(), SimError> {
        let (c, k) = self.split(gid);
        if !self.cns[c].alive {
            return Ok(());
        }
        let protocol = self.protocol();
        let core = &mut self.cns[c].cores[k];
        core.drain_pending = false;
        let Some(head) = core.sb.front() else {
            return self.sb_emptied(gid);
        };
        let line = head.line;
        if !head.remote {
            return self.commit_head(gid);
        }
        if protocol == Protocol::Wt {
            if core.wt_in_flight || head.wt_sent {
                return Ok(());
            }
            let (mask, values) = (head.mask, head.values);
            core.sb[0].wt_sent = true;
            core.wt_in_flight = true;
            self.stats.wt_stores += 1;
            let dst = self.home(line);
            return self.send(Message::new(
                Endpoint::Cn(c as u16),
                dst,
                Body::WtStore { line, core: gid, mask, values },
            ));
        }
        let coh = self.cns[c].owns(line);
        if !coh {
            self.request_line(c, line, true)?;
        }
        if protocol.replicates() && self.cns[c].cores[k].sb[0].repl.is_none() {
            if self.trigger != Some(ReplTrigger::HeadAfterCoherence) || coh {
                self.issue_repl(gid, 0, true)?;
            }
        }
        let acks = self.cns[c].cores[k].sb[0].repl.as_ref().is_some_and(|r| r.complete());
        if commit_gate(protocol, true, coh, acks).is_ok() {
            self.commit_head(gid)?;
        }
        Ok(())
    }

    fn commit_head(&mut self, gid: u32) -> Result<(), SimError> {
        let (c, k) = self.split(gid);
        let now = self.now();
        let protocol = self.protocol();
        let slot = self.cns[c].cores[k].sb.pop_front().expect("head");
        if slot.remote {
            if protocol.replicates() {
                let repl = slot.repl.as_ref();
                if !(repl.is_some_and(|r| r.complete()) && self.cns[c].owns(slot.line)) {
                    self.stats.gate_violations += 1;
                }
                if let Some(r) = repl {
                    for &m in &r.group {
                        let ts = self.cns[c].ts.next(m);
                        self.stats.val_messages += 1;
                        let body = Body::Val { core: gid, txn: r.txn, line: slot.line, ts };
                        self.send(Message::new(Endpoint::Cn(c as u16), Endpoint::Cn(m), body))?;
                    }
                }
            }
            let cn = &mut self.cns[c];
            let l = cn.llc.get_mut(slot.line).ok_or_else(|| {
                SimError::ProtocolViolation(format!("core {gid} committed to line {:#x} it does not hold", slot.line))
            })?;
            for (w, v) in slot.words() {
                l.data[w] = v;
            }
            l.state = Mesi::M;
            cn.l1[k].insert(slot.line, ());
            for (w, v) in slot.words() {
                self.oracle.record_commit(word_addr(slot.line, w), v, now, gid);
            }
            self.stats.remote_slot_commits += 1;
            self.cns[c].cores[k].stats.remote_commits += 1;
        } else if let Some(l) = self.cns[c].llc.get_mut(slot.line) {
            l.state = Mesi::M;
            self.cns[c].llc.touch(slot.line);
        } else {
            self.install(c, slot.line, LlcLine { state: Mesi::M, data: [0; 8] })?;
        }
        self.after_commit(gid)
    }

    fn after_commit(&mut self, gid: u32) -> Result<(), SimError> {
        let (c, k) = self.split(gid);
        self.stats.slot_commits += 1;
        self.cns[c].cores[k].stats.commits += 1;
        let n = self.stats.slot_commits;
        for i in 0..self.crashes.len() {
            if !self.crash_fired[i] && matches!(self.crashes[i].trigger, CrashTrigger::AfterCommits(m) if n >= m) {
                self.crash_fired[i] = true;
                let now = self.now();
                self.schedule(now, ComponentId::Harness, Ev::Crash(i))?;
            }
        }
        let now = self.now();
        if self.cns[c].cores[k].wait == Wait::SbFull {
            self.wake(gid, now)?;
        }
        if self.cns[c].cores[k].sb.is_empty() {
            self.sb_emptied(gid)
        } else {
            let at = now + self.cycles(1);
            self.kick_drain_at(gid, at)
        }
    }

    fn sb_emptied(&mut self, gid: u32) -> Result<(), SimError> {
        let (c, k) = self.split(gid);
        if !self.cns[c].cores[k].sb_empty() {
            return Ok(());
        }
        if self.cns[c].cores[k].wait == Wait::Drain {
            let now = self.now();
            self.wake(gid, now)?;
        }
        self.mark_finished(gid);
        Ok(())
    }

    pub(super) fn on_wt_ack(&mut self, c16: u16, line: LineAddr, gid: u32) -> Result<(), SimError> {
        let (c, k) = self.split(gid);
        debug_assert_eq!(c, c16 as usize);
        let now = self.now();
        let core = &mut self.cns[c].cores[k];
        match core.sb.front() {
            Some(s) if s.wt_sent && s.line == line => {}
            _ => return Err(SimError::ProtocolViolation(format!("unexpected WT ack for core {gid}"))),
        }
        let slot = core.sb.pop_front().expect("head");
        core.wt_in_flight = false;
        core.stats.remote_commits += 1;
        if let Some(l) = self.cns[c].llc.get_mut(line) {
            for (w, v) in slot.words() {
                l.data[w] = v;
            }
        }
        for (w, v) in slot.words() {
            self.oracle.record_commit(word_addr(line, w), v, now, gid);
        }
        self.stats.remote_slot_commits += 1;
        self.after_commit(gid)
    }

    pub(super) fn on_repl_ack(&mut self, gid: u32, txn: u64, from: u16) -> Result<(), SimError> {
        let (c, k) = self.split(gid);
        if !self.cns[c].alive {
            return Ok(());
        }
        let live_from = self.live_now()[from as usize];
        let core = &mut self.cns[c].cores[k];
        let Some(idx) = core.sb.iter().position(|s| s.repl.as_ref().is_some_and(|r| r.txn == txn)) else {
            return Err(SimError::ProtocolViolation(format!(
                "REPL ack from CN{from} for unknown txn {txn} of core {gid}"
            )));
        };
        let repl = core.sb[idx].repl.as_mut().expect("repl");
        match repl.on_ack(from) {
            Ok(true) if idx == 0 => self.kick_drain(gid),
            Ok(_) => Ok(()),
            // A unit dropped from the group by recovery may still have had an ack in flight.
            Err(AckError::NotMember(_)) if !live_from => Ok(()),
            Err(e) => Err(SimError::ProtocolViolation(format!("core {gid} txn {txn}: {e:?}"))),
        }
    }

    // --- Logging Unit ---

    fn lu_ack(&mut self, d: u16, body: &ReplBody) -> Result<(), SimError> {
        let ack = Body::ReplAck { core: body.core, txn: body.txn, from: d };
        self.send(Message::new(Endpoint::Cn(d), Endpoint::Cn(body.requester_cn), ack))
    }

    pub(super) fn lu_repl_done(&mut self, d: u16, body: ReplBody) -> Result<(), SimError> {
        let now = self.now();
        if !self.cns[d as usize].alive {
            return Ok(());
        }
        let lu = &mut self.cns[d as usize].lu;
        if lu.backlog.is_empty() && lu.append(&body, false) {
            return self.lu_ack(d, &body);
        }
        lu.backlog.push_back((body, now));
        if lu.backlog.len() == 1 {
            let at = now + SimTime::from_ns(self.cfg.sram_spill_timeout_ns);
            self.schedule(at, ComponentId::LoggingUnit(d), Ev::LuSpill { cn: d })?;
        }
        Ok(())
    }

    pub(super) fn lu_admit_backlog(&mut self, d: u16) -> Result<(), SimError> {
        loop {
            let lu = &mut self.cns[d as usize].lu;
            let Some((b, _)) = lu.backlog.front().cloned() else { return Ok(()) };
            if !lu.append(&b, false) {
                return Ok(());
            }
            let (b, _) = lu.backlog.pop_front().expect("front");
            self.lu_ack(d, &b)?;
        }
    }

    pub(super) fn lu_spill(&mut self, d: u16) -> Result<(), SimError> {
        if !self.cns[d as usize].alive {
            return Ok(());
        }
        let now = self.now();
        let timeout = SimTime::from_ns(self.cfg.sram_spill_timeout_ns);
        loop {
            let lu = &mut self.cns[d as usize].lu;
            let Some(&(_, arrived)) = lu.backlog.front() else { return Ok(()) };
            if arrived + timeout > now {
                let at = arrived + timeout;
                return self.schedule(at, ComponentId::LoggingUnit(d), Ev::LuSpill { cn: d });
            }
            let (b, _) = lu.backlog.pop_front().expect("front");
            lu.append(&b, true);
            self.lu_ack(d, &b)?;
            self.lu_admit_backlog(d)?;
        }
    }

    pub(super) fn lu_val(&mut self, d: u16, core: u32, txn: u64, ts: u64) -> Result<(), SimError> {
        match self.cns[d as usize].lu.on_val(core, txn, ts) {
            Ok(_) => {}
            Err(LogError::UnmatchedVal { core, txn }) => {
                return Err(SimError::ProtocolViolation(format!("CN{d} got a VAL for unknown update ({core}, {txn})")))
            }
            Err(LogError::DramOverflow { bytes, capacity }) => {
                return Err(SimError::DramLogOverflow { cn: d, bytes, capacity })
            }
        }
        self.lu_admit_backlog(d)
    }

    pub(super) fn lu_fetch(
        &mut self,
        d: u16,
        src: Endpoint,
        recovery: u64,
        lines: Vec<LineAddr>,
    ) -> Result<(), SimError> {
        let (res, invalid) = self.cns[d as usize].lu.traverse(&lines);
        let at = self.now() + SimTime::from_ns(self.cfg.dram_ns);
        let body = Body::FetchLatestVersResp { recovery, lines: res, invalid_skipped: invalid };
        self.send_at(at, Message::new(Endpoint::Cn(d), src, body))
    }
}
