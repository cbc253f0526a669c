//! The cluster simulation: event dispatch tying compute nodes, memory nodes,
//! the fabric, Logging Units and recovery together.

mod cn;
mod mn;
mod recover;

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::addr::{home_mn, LineAddr};
use crate::config::{ClusterConfig, Protocol};
use crate::directory::{DirAction, MemoryNode};
use crate::engine::{ComponentId, EventQueue, SimTime};
use crate::error::SimError;
use crate::fabric::{Body, Endpoint, Fabric, Message};
use crate::logging::{Compressor, EntryKey, RatioCompressor};
use crate::node::{ComputeNode, Wait};
use crate::oracle::{GoldenHistory, VerifyReport};
use crate::recovery::{CrashPlan, CrashTrigger, RecoveryReport};
use crate::replication::{repl_trigger, ReplBody, ReplTrigger};
use crate::trace::Trace;

pub(crate) enum Ev {
    Step(u32),
    Drain(u32),
    Deliver(Message),
    /// A delayed send (e.g. after a handler or memory latency).
    Send(Message),
    LuRepl {
        cn: u16,
        body: ReplBody,
    },
    LuSpill {
        cn: u16,
    },
    DirFinish {
        mn: u16,
        line: LineAddr,
    },
    DumpTick,
    Crash(usize),
    Detect(u16),
}

#[derive(Clone, Debug)]
pub struct SimOptions {
    pub seed: u64,
    pub crashes: Vec<CrashPlan>,
    /// Abort with a deadlock diagnostic after this many events.
    pub max_events: u64,
    /// Keep a log of every message send (see `Fabric::sent_log`).
    pub log_messages: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { seed: 1, crashes: Vec::new(), max_events: 2_000_000_000, log_messages: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimStats {
    pub events: u64,
    pub repl_transactions: u64,
    pub repl_at_head: u64,
    pub repl_resent: u64,
    pub val_messages: u64,
    pub remote_slot_commits: u64,
    pub slot_commits: u64,
    pub gate_violations: u64,
    pub wt_stores: u64,
    pub dump_rounds: u64,
    pub dump_rounds_completed: u64,
    pub dump_messages: u64,
}

struct LockState {
    holder: Option<u32>,
    waiters: VecDeque<u32>,
}

struct DumpRound {
    round: u64,
    pending: Vec<u16>,
    participants: Vec<u16>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CmPhase {
    Interrupt,
    Init,
    End,
}

struct CmRun {
    cm: u16,
    victims: Vec<u16>,
    live: Vec<u16>,
    phase: CmPhase,
    pending: Vec<u16>,
    report: RecoveryReport,
    recovery_msgs_before: u64,
}

struct MnRecovery {
    id: u64,
    cm: u16,
    owned: Vec<LineAddr>,
    pending: Vec<u16>,
    /// Per line: (rank, responding CN, per-word histories).
    responses: BTreeMap<LineAddr, Vec<(usize, u16, Vec<crate::fabric::WordHistory>)>>,
    shared: u64,
    fetches: u64,
    invalid_skipped: u64,
}

pub struct Simulation {
    cfg: ClusterConfig,
    trace: Arc<Trace>,
    queue: EventQueue<Ev>,
    fabric: Fabric,
    cns: Vec<ComputeNode>,
    mns: Vec<MemoryNode>,
    oracle: GoldenHistory,
    locks: BTreeMap<u32, LockState>,
    barriers: BTreeMap<(u32, u32), Vec<u32>>,
    /// Live-CN sets; a new epoch starts at every recovery end.
    epochs: Vec<Vec<bool>>,
    crashes: Vec<CrashPlan>,
    crash_fired: Vec<bool>,
    crash_times: BTreeMap<u16, SimTime>,
    recovered: Vec<bool>,
    recovery: Option<CmRun>,
    recovery_seq: u64,
    reports: Vec<RecoveryReport>,
    mn_recovery: Vec<Option<MnRecovery>>,
    dump_round_seq: u64,
    dump: Option<DumpRound>,
    dumped_keys: HashSet<EntryKey>,
    compressor: Box<dyn Compressor>,
    finished: Vec<bool>,
    unfinished: usize,
    completed_at: Option<SimTime>,
    load_hist: BTreeMap<u64, u64>,
    max_events: u64,
    stats: SimStats,
    verify: VerifyReport,
    trigger: Option<ReplTrigger>,
}

impl Simulation {
    pub fn new(cfg: ClusterConfig, trace: impl Into<Arc<Trace>>, opts: SimOptions) -> Result<Self, SimError> {
        cfg.validate()?;
        let trace = trace.into();
        if trace.num_cores() != cfg.total_cores() {
            return Err(SimError::TraceShape { trace: trace.num_cores(), cluster: cfg.total_cores() });
        }
        trace.check_barriers()?;
        for plan in &opts.crashes {
            for &v in &plan.victims {
                if v as usize >= cfg.num_cns {
                    return Err(SimError::UnknownDestination(format!("crash victim CN{v}")));
                }
            }
        }
        let dram = SimTime::from_ns(cfg.dram_ns);
        let pmem = SimTime::from_ns(cfg.pmem_ns);
        let total = cfg.total_cores();
        let mut fabric = Fabric::new(&cfg, opts.seed);
        if opts.log_messages {
            fabric.enable_log();
        }
        Ok(Self {
            fabric,
            cns: (0..cfg.num_cns).map(|c| ComputeNode::new(c as u16, &cfg)).collect(),
            mns: (0..cfg.num_mns).map(|m| MemoryNode::new(m as u16, dram, pmem)).collect(),
            queue: EventQueue::new(),
            oracle: GoldenHistory::new(),
            locks: BTreeMap::new(),
            barriers: BTreeMap::new(),
            epochs: vec![vec![true; cfg.num_cns]],
            crash_fired: vec![false; opts.crashes.len()],
            crashes: opts.crashes,
            crash_times: BTreeMap::new(),
            recovered: vec![false; cfg.num_cns],
            recovery: None,
            recovery_seq: 0,
            reports: Vec::new(),
            mn_recovery: (0..cfg.num_mns).map(|_| None).collect(),
            dump_round_seq: 0,
            dump: None,
            dumped_keys: HashSet::new(),
            compressor: Box::new(RatioCompressor { ratio: cfg.compression_ratio }),
            finished: vec![false; total],
            unfinished: total,
            completed_at: None,
            load_hist: BTreeMap::new(),
            max_events: opts.max_events,
            stats: SimStats::default(),
            verify: VerifyReport::new(),
            trigger: repl_trigger(cfg.protocol, cfg.coalescing_enabled),
            trace,
            cfg,
        })
    }

    /// Replaces the ratio model with another compressor.
    pub fn set_compressor(&mut self, c: Box<dyn Compressor>) {
        self.compressor = c;
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.cfg
    }

    fn now(&self) -> SimTime {
        self.queue.now()
    }

    fn split(&self, gid: u32) -> (usize, usize) {
        let per = self.cfg.cores_per_cn;
        (gid as usize / per, gid as usize % per)
    }

    fn protocol(&self) -> Protocol {
        self.cfg.protocol
    }

    fn epoch(&self) -> u32 {
        (self.epochs.len() - 1) as u32
    }

    fn live_now(&self) -> &[bool] {
        self.epochs.last().expect("epoch")
    }

    fn home(&self, line: LineAddr) -> Endpoint {
        Endpoint::Mn(home_mn(line, self.cfg.num_mns) as u16)
    }

    fn schedule(&mut self, at: SimTime, target: ComponentId, ev: Ev) -> Result<(), SimError> {
        self.queue.schedule(at, target, ev).map(|_| ())
    }

    fn send(&mut self, msg: Message) -> Result<(), SimError> {
        self.fabric.send(&mut self.queue, msg, Ev::Deliver)
    }

    fn send_at(&mut self, at: SimTime, msg: Message) -> Result<(), SimError> {
        if at <= self.now() {
            return self.send(msg);
        }
        let target = msg.src.component();
        self.schedule(at, target, Ev::Send(msg))
    }

    fn dir_actions(&mut self, mn: u16, actions: Vec<DirAction>) -> Result<(), SimError> {
        for a in actions {
            match a {
                DirAction::Send { to, body } => self.send(Message::new(Endpoint::Mn(mn), Endpoint::Cn(to), body))?,
                DirAction::FinishAfter { line, delay } => {
                    let at = self.now() + delay;
                    self.schedule(at, ComponentId::MemoryNode(mn), Ev::DirFinish { mn, line })?;
                }
            }
        }
        Ok(())
    }

    fn start(&mut self) -> Result<(), SimError> {
        for gid in 0..self.cfg.total_cores() as u32 {
            self.schedule_step(gid, SimTime::ZERO)?;
        }
        if self.protocol().replicates() {
            let period = self.cfg.dump_period();
            self.queue.schedule_background(period, ComponentId::Harness, Ev::DumpTick)?;
        }
        for i in 0..self.crashes.len() {
            if let CrashTrigger::At(t) = self.crashes[i].trigger {
                self.schedule(t, ComponentId::Harness, Ev::Crash(i))?;
            }
        }
        Ok(())
    }

    /// Runs until every live core has finished its trace and drained its SB, then lets
    /// in-flight traffic settle and verifies the final memory image. Returns the
    /// completion time.
    pub fn run(&mut self) -> Result<SimTime, SimError> {
        self.start()?;
        loop {
            if self.completed_at.is_none() && self.unfinished == 0 {
                self.completed_at = Some(self.now());
            }
            if !self.queue.has_foreground() {
                if self.completed_at.is_some() {
                    break;
                }
                return Err(SimError::Deadlock { at: self.now(), blocked: self.blocked_report() });
            }
            let Some(ev) = self.queue.pop() else { break };
            self.stats.events += 1;
            if self.stats.events > self.max_events {
                let mut blocked = self.blocked_report();
                blocked.insert(0, "event budget exhausted".into());
                return Err(SimError::Deadlock { at: self.now(), blocked });
            }
            self.dispatch(ev.payload)?;
        }
        self.final_verification();
        Ok(self.completed_at.expect("completed"))
    }

    fn dispatch(&mut self, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Step(g) => self.step_core(g),
            Ev::Drain(g) => self.drain(g),
            Ev::Deliver(msg) => self.deliver(msg),
            Ev::Send(msg) => {
                if let Endpoint::Cn(c) = msg.src {
                    if !self.cns[c as usize].alive {
                        return Ok(());
                    }
                }
                self.send(msg)
            }
            Ev::LuRepl { cn, body } => self.lu_repl_done(cn, body),
            Ev::LuSpill { cn } => self.lu_spill(cn),
            Ev::DirFinish { mn, line } => {
                let acts = self.mns[mn as usize].finish(line);
                self.dir_actions(mn, acts)
            }
            Ev::DumpTick => self.dump_tick(),
            Ev::Crash(i) => self.crash(i),
            Ev::Detect(cn) => self.detect(cn),
        }
    }

    fn deliver(&mut self, msg: Message) -> Result<(), SimError> {
        match msg.dst {
            Endpoint::Cn(c) => {
                let alive = self.cns[c as usize].alive;
                self.fabric.note_delivered(!alive);
                if alive {
                    self.cn_receive(c, msg.src, msg.body)?;
                }
                Ok(())
            }
            Endpoint::Mn(m) => {
                self.fabric.note_delivered(false);
                self.mn_receive(m, msg.src, msg.body)
            }
            Endpoint::Switch => {
                self.fabric.note_delivered(false);
                Ok(())
            }
        }
    }

    fn cn_receive(&mut self, c: u16, src: Endpoint, body: Body) -> Result<(), SimError> {
        match body {
            Body::RdAck { line, data } => self.fill(c, line, false, data),
            Body::RdXAck { line, data } => self.fill(c, line, true, data),
            Body::Inv { line, downgrade } => self.on_inv(c, src, line, downgrade),
            Body::WbAck { line } => self.on_wb_ack(c, line),
            Body::WtAck { line, core } => self.on_wt_ack(c, line, core),
            Body::Repl(r) => {
                let lu = &mut self.cns[c as usize].lu;
                let at = lu.busy_until.max(self.queue.now()) + SimTime::from_ns(self.cfg.sram_access_ns);
                lu.busy_until = at;
                self.schedule(at, ComponentId::LoggingUnit(c), Ev::LuRepl { cn: c, body: r })
            }
            Body::ReplAck { core, txn, from } => self.on_repl_ack(core, txn, from),
            Body::Val { core, txn, ts, .. } => self.lu_val(c, core, txn, ts),
            Body::LogClearGrant { round } => {
                let keys = &self.dumped_keys;
                self.cns[c as usize].lu.clear_round(round, |e| keys.contains(&e.key()));
                Ok(())
            }
            Body::FetchLatestVers { recovery, lines } => self.lu_fetch(c, src, recovery, lines),
            Body::Interrupt { recovery } => self.cn_interrupt(c, src, recovery),
            Body::RecovEnd { recovery, victims } => self.cn_recov_end(c, src, recovery, victims),
            Body::Msi { victim } => self.cm_msi(c, victim),
            Body::InterruptResp { recovery } => self.cm_interrupt_resp(src, recovery),
            Body::InitRecovResp { recovery, owned_lines, shared_lines, repaired_words, fetches } => {
                self.cm_init_resp(src, recovery, owned_lines, shared_lines, repaired_words, fetches)
            }
            Body::RecovEndResp { recovery } => self.cm_end_resp(src, recovery),
            other => Err(SimError::ProtocolViolation(format!("CN{c} cannot handle {:?}", other.kind()))),
        }
    }

    fn mn_receive(&mut self, m: u16, src: Endpoint, body: Body) -> Result<(), SimError> {
        use crate::directory::{ReqKind, Request};
        let from = match src {
            Endpoint::Cn(c) => c,
            _ => return Err(SimError::ProtocolViolation(format!("MN{m} got a message from {src:?}"))),
        };
        let req = |kind| Request { from, kind };
        let acts = match body {
            Body::Rd { line } => self.mns[m as usize].handle_request(line, req(ReqKind::Rd)),
            Body::RdX { line } => self.mns[m as usize].handle_request(line, req(ReqKind::RdX)),
            Body::WbEvict { line, data } => self.mns[m as usize].handle_request(line, req(ReqKind::WbEvict(data))),
            Body::WtStore { line, core, mask, values } => {
                self.mns[m as usize].handle_request(line, req(ReqKind::WtStore { core, mask, values }))
            }
            Body::InvAck { line, data } => self.mns[m as usize].on_inv_ack(line, from, data),
            Body::LogDump { segment, .. } => {
                if let Some(seg) = segment {
                    for e in &seg.entries {
                        self.dumped_keys.insert((e.core, e.txn, e.word));
                    }
                    self.mns[m as usize].apply_log_dump(*seg);
                }
                Vec::new()
            }
            Body::LogDumpDone { round } => return self.dump_done(from, round),
            Body::InitRecov { recovery, victims } => return self.mn_init_recov(m, from, recovery, victims),
            Body::FetchLatestVersResp { recovery, lines, invalid_skipped } => {
                return self.mn_fetch_resp(m, from, recovery, lines, invalid_skipped)
            }
            other => return Err(SimError::ProtocolViolation(format!("MN{m} cannot handle {:?}", other.kind()))),
        };
        self.dir_actions(m, acts)
    }

    fn blocked_report(&self) -> Vec<String> {
        let mut out = Vec::new();
        for cn in &self.cns {
            if !cn.alive {
                continue;
            }
            for core in &cn.cores {
                if self.finished[core.gid as usize] {
                    continue;
                }
                let head = core.sb.front().map(|s| {
                    format!(
                        " head line {:#x} owned={} repl={:?} mshr={:?}",
                        s.line,
                        cn.owns(s.line),
                        s.repl_phase(),
                        cn.mshr.get(&s.line)
                    )
                });
                out.push(format!(
                    "core {} (CN{}): pc {}/{} wait {:?} sb {}{}{}",
                    core.gid,
                    cn.id,
                    core.pc,
                    self.trace.cores[core.gid as usize].len(),
                    core.wait,
                    core.sb.len(),
                    head.unwrap_or_default(),
                    if core.parked { " parked" } else { "" }
                ));
                if out.len() >= 16 {
                    return out;
                }
            }
        }
        for mn in &self.mns {
            let busy = mn.busy_lines();
            if busy > 0 {
                out.push(format!("MN{} has {busy} lines with pending transactions", mn.id));
            }
        }
        out
    }

    fn mark_finished(&mut self, gid: u32) {
        let (c, k) = self.split(gid);
        let core = &self.cns[c].cores[k];
        if !self.finished[gid as usize] && core.wait == Wait::Done && core.sb_empty() {
            self.finished[gid as usize] = true;
            self.unfinished -= 1;
        }
    }

    // --- accessors used by metrics and tests ---

    pub fn stats(&self) -> &SimStats {
        &self.stats
    }

    pub fn fabric(&self) -> &Fabric {
        &self.fabric
    }

    pub fn compute_nodes(&self) -> &[ComputeNode] {
        &self.cns
    }

    pub fn memory_nodes(&self) -> &[MemoryNode] {
        &self.mns
    }

    pub fn oracle(&self) -> &GoldenHistory {
        &self.oracle
    }

    pub fn verification(&self) -> &VerifyReport {
        &self.verify
    }

    pub fn recovery_reports(&self) -> &[RecoveryReport] {
        &self.reports
    }

    pub fn completed_at(&self) -> Option<SimTime> {
        self.completed_at
    }

    pub fn now_time(&self) -> SimTime {
        self.queue.now()
    }

    pub fn queue_stats(&self) -> crate::engine::QueueStats {
        self.queue.stats()
    }

    /// Load latency (ps) histogram over all completed loads.
    pub fn load_latency_histogram(&self) -> &BTreeMap<u64, u64> {
        &self.load_hist
    }

    pub fn crash_times(&self) -> &BTreeMap<u16, SimTime> {
        &self.crash_times
    }

    /// Value of a remote word as the cluster would see it: an owning live CN's dirty copy,
    /// else memory at the home MN.
    pub fn word_value(&self, addr: u64) -> u64 {
        let line = crate::addr::line_of(addr);
        let w = crate::addr::word_index(addr);
        for cn in self.cns.iter().filter(|c| c.alive) {
            if let Some(l) = cn.llc.get(line) {
                if l.state == crate::node::Mesi::M {
                    return l.data[w];
                }
            }
            if let Some(Some(d)) = cn.wb_buffer.get(&line) {
                return d[w];
            }
        }
        self.mns[home_mn(line, self.cfg.num_mns)].line(line)[w]
    }

    /// The cluster's remote memory as seen after draining: MN memory overlaid with dirty
    /// lines still cached (or being written back) at live CNs. All-zero lines are omitted.
    pub fn memory_image(&self) -> BTreeMap<LineAddr, crate::addr::LineData> {
        let mut image = BTreeMap::new();
        for mn in &self.mns {
            image.extend(mn.memory().iter().map(|(l, d)| (*l, *d)));
        }
        for cn in self.cns.iter().filter(|c| c.alive) {
            for (line, d) in &cn.wb_buffer {
                if let Some(d) = d {
                    image.insert(*line, *d);
                }
            }
            for (line, l) in cn.llc.iter() {
                if crate::addr::is_remote(line) && l.state == crate::node::Mesi::M {
                    image.insert(line, l.data);
                }
            }
        }
        image.retain(|_, d| d.iter().any(|&w| w != 0));
        image
    }

    /// Total DRAM-log timestamp inversions: counted at push time and by an independent rescan.
    pub fn ts_inversions(&self) -> u64 {
        self.cns.iter().map(|c| c.lu.stats.ts_inversions + c.lu.count_order_violations()).sum()
    }
}
