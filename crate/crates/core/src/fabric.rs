//! The CXL switch: per-endpoint links, latency and bandwidth, reordering of
//! replication traffic, viral-status tracking and byte accounting.
//!
//! Every endpoint (CN, MN, the switch itself) has one link to the switch with
//! independent egress and ingress queues. A message occupies the sender's
//! egress link for `size / bandwidth`, flies for half the round-trip time, and
//! then occupies the receiver's ingress link. Ingress slots are reserved at
//! send time, so deliveries to one endpoint follow send order unless a swap is
//! injected.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::addr::{LineAddr, LineData};
use crate::config::ClusterConfig;
use crate::directory::Segment;
use crate::engine::{streams, ComponentId, EventHandle, EventQueue, SeededRng, SimTime};
use crate::error::SimError;
use crate::logging::LogVersion;
use crate::replication::ReplBody;

pub const FLIT_BYTES: u64 = 64;
pub const DATA_MSG_BYTES: u64 = 128;
pub const BANDWIDTH_WINDOW: SimTime = SimTime::from_us(100);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Endpoint {
    Cn(u16),
    Mn(u16),
    Switch,
}

impl Endpoint {
    pub fn component(self) -> ComponentId {
        match self {
            Endpoint::Cn(c) => ComponentId::ComputeNode(c),
            Endpoint::Mn(m) => ComponentId::MemoryNode(m),
            Endpoint::Switch => ComponentId::Switch,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MsgKind {
    Rd,
    RdX,
    RdAck,
    RdXAck,
    Inv,
    InvAck,
    WbEvict,
    WbAck,
    WtStore,
    WtAck,
    Repl,
    ReplAck,
    Val,
    LogDump,
    LogDumpDone,
    LogClearGrant,
    Interrupt,
    InterruptResp,
    InitRecov,
    InitRecovResp,
    FetchLatestVers,
    FetchLatestVersResp,
    RecovEnd,
    RecovEndResp,
    Msi,
}

impl MsgKind {
    pub const COUNT: usize = MsgKind::Msi as usize + 1;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MsgClass {
    Coherence,
    Replication,
    LogDump,
    Recovery,
}

impl MsgClass {
    pub const ALL: [MsgClass; 4] = [MsgClass::Coherence, MsgClass::Replication, MsgClass::LogDump, MsgClass::Recovery];

    fn index(self) -> usize {
        self as usize
    }
}

/// One word's logged history as returned by a Logging Unit, newest first.
pub type WordHistory = Vec<LogVersion>;

#[derive(Clone, Debug, PartialEq)]
pub enum Body {
    Rd {
        line: LineAddr,
    },
    RdX {
        line: LineAddr,
    },
    RdAck {
        line: LineAddr,
        data: LineData,
    },
    RdXAck {
        line: LineAddr,
        data: LineData,
    },
    Inv {
        line: LineAddr,
        downgrade: bool,
    },
    InvAck {
        line: LineAddr,
        data: Option<LineData>,
    },
    WbEvict {
        line: LineAddr,
        data: Option<LineData>,
    },
    WbAck {
        line: LineAddr,
    },
    WtStore {
        line: LineAddr,
        core: u32,
        mask: u8,
        values: LineData,
    },
    WtAck {
        line: LineAddr,
        core: u32,
    },
    Repl(ReplBody),
    ReplAck {
        core: u32,
        txn: u64,
        from: u16,
    },
    Val {
        core: u32,
        txn: u64,
        line: LineAddr,
        ts: u64,
    },
    /// One 64-byte piece of a compressed dump; the final piece carries the segment.
    LogDump {
        round: u64,
        segment: Option<Box<Segment>>,
    },
    LogDumpDone {
        round: u64,
    },
    LogClearGrant {
        round: u64,
    },
    Interrupt {
        recovery: u64,
    },
    InterruptResp {
        recovery: u64,
    },
    InitRecov {
        recovery: u64,
        victims: Vec<u16>,
    },
    InitRecovResp {
        recovery: u64,
        owned_lines: u64,
        shared_lines: u64,
        repaired_words: u64,
        fetches: u64,
    },
    FetchLatestVers {
        recovery: u64,
        lines: Vec<LineAddr>,
    },
    FetchLatestVersResp {
        recovery: u64,
        lines: Vec<(LineAddr, Vec<WordHistory>)>,
        invalid_skipped: u64,
    },
    RecovEnd {
        recovery: u64,
        victims: Vec<u16>,
    },
    RecovEndResp {
        recovery: u64,
    },
    Msi {
        victim: u16,
    },
}

impl Body {
    pub fn kind(&self) -> MsgKind {
        match self {
            Body::Rd { .. } => MsgKind::Rd,
            Body::RdX { .. } => MsgKind::RdX,
            Body::RdAck { .. } => MsgKind::RdAck,
            Body::RdXAck { .. } => MsgKind::RdXAck,
            Body::Inv { .. } => MsgKind::Inv,
            Body::InvAck { .. } => MsgKind::InvAck,
            Body::WbEvict { .. } => MsgKind::WbEvict,
            Body::WbAck { .. } => MsgKind::WbAck,
            Body::WtStore { .. } => MsgKind::WtStore,
            Body::WtAck { .. } => MsgKind::WtAck,
            Body::Repl(_) => MsgKind::Repl,
            Body::ReplAck { .. } => MsgKind::ReplAck,
            Body::Val { .. } => MsgKind::Val,
            Body::LogDump { .. } => MsgKind::LogDump,
            Body::LogDumpDone { .. } => MsgKind::LogDumpDone,
            Body::LogClearGrant { .. } => MsgKind::LogClearGrant,
            Body::Interrupt { .. } => MsgKind::Interrupt,
            Body::InterruptResp { .. } => MsgKind::InterruptResp,
            Body::InitRecov { .. } => MsgKind::InitRecov,
            Body::InitRecovResp { .. } => MsgKind::InitRecovResp,
            Body::FetchLatestVers { .. } => MsgKind::FetchLatestVers,
            Body::FetchLatestVersResp { .. } => MsgKind::FetchLatestVersResp,
            Body::RecovEnd { .. } => MsgKind::RecovEnd,
            Body::RecovEndResp { .. } => MsgKind::RecovEndResp,
            Body::Msi { .. } => MsgKind::Msi,
        }
    }

    pub fn line(&self) -> Option<LineAddr> {
        match self {
            Body::Rd { line }
            | Body::RdX { line }
            | Body::RdAck { line, .. }
            | Body::RdXAck { line, .. }
            | Body::Inv { line, .. }
            | Body::InvAck { line, .. }
            | Body::WbEvict { line, .. }
            | Body::WbAck { line }
            | Body::WtStore { line, .. }
            | Body::WtAck { line, .. }
            | Body::Val { line, .. } => Some(*line),
            Body::Repl(r) => Some(r.line),
            _ => None,
        }
    }

    pub fn class(&self) -> MsgClass {
        match self.kind() {
            MsgKind::Repl | MsgKind::ReplAck | MsgKind::Val => MsgClass::Replication,
            MsgKind::LogDump | MsgKind::LogDumpDone | MsgKind::LogClearGrant => MsgClass::LogDump,
            MsgKind::Interrupt
            | MsgKind::InterruptResp
            | MsgKind::InitRecov
            | MsgKind::InitRecovResp
            | MsgKind::FetchLatestVers
            | MsgKind::FetchLatestVersResp
            | MsgKind::RecovEnd
            | MsgKind::RecovEndResp
            | MsgKind::Msi => MsgClass::Recovery,
            _ => MsgClass::Coherence,
        }
    }

    pub fn size_bytes(&self) -> u64 {
        match self {
            Body::RdAck { .. } | Body::RdXAck { .. } | Body::WtStore { .. } => DATA_MSG_BYTES,
            Body::InvAck { data: Some(_), .. } | Body::WbEvict { data: Some(_), .. } => DATA_MSG_BYTES,
            Body::Repl(r) => r.size_bytes(),
            Body::FetchLatestVers { lines, .. } => (8 + 8 * lines.len() as u64).div_ceil(FLIT_BYTES) * FLIT_BYTES,
            Body::FetchLatestVersResp { lines, .. } => {
                let entries: u64 = lines.iter().flat_map(|(_, w)| w.iter()).map(|h| h.len() as u64).sum();
                FLIT_BYTES + (entries * 16).div_ceil(FLIT_BYTES) * FLIT_BYTES
            }
            _ => FLIT_BYTES,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub body: Body,
}

impl Message {
    pub fn new(src: Endpoint, dst: Endpoint, body: Body) -> Self {
        Self { src, dst, body }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassBytes {
    pub coherence_bytes: u64,
    pub replication_bytes: u64,
    pub logdump_bytes: u64,
    pub recovery_bytes: u64,
}

impl ClassBytes {
    fn add(&mut self, class: MsgClass, bytes: u64) {
        match class {
            MsgClass::Coherence => self.coherence_bytes += bytes,
            MsgClass::Replication => self.replication_bytes += bytes,
            MsgClass::LogDump => self.logdump_bytes += bytes,
            MsgClass::Recovery => self.recovery_bytes += bytes,
        }
    }

    pub fn merge(&mut self, other: &ClassBytes) {
        self.coherence_bytes += other.coherence_bytes;
        self.replication_bytes += other.replication_bytes;
        self.logdump_bytes += other.logdump_bytes;
        self.recovery_bytes += other.recovery_bytes;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CnBandwidth {
    pub cn: u16,
    pub total: ClassBytes,
    /// Bytes per consecutive window of `BANDWIDTH_WINDOW`.
    pub windows: Vec<ClassBytes>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FabricCounters {
    pub sent: u64,
    pub delivered: u64,
    pub dropped_viral: u64,
    /// Deliveries to a crashed CN that is not yet marked viral; they get no response.
    pub delivered_to_dead: u64,
    pub reordered: u64,
    /// Messages sent, indexed by `MsgKind as usize`.
    pub kind_counts: Vec<u64>,
    pub bytes_by_class: [u64; 4],
}

struct PendingRepl {
    handle: EventHandle,
    at: SimTime,
    msg: Message,
}

pub struct Fabric {
    one_way: SimTime,
    gbps: f64,
    p_reorder: f64,
    num_cns: usize,
    num_mns: usize,
    egress_free: Vec<SimTime>,
    ingress_free: Vec<SimTime>,
    viral: Vec<bool>,
    rng: ChaCha8Rng,
    last_repl: HashMap<(Endpoint, Endpoint), PendingRepl>,
    counters: FabricCounters,
    per_cn: Vec<CnBandwidth>,
    log: Option<Vec<SentRecord>>,
}

/// One entry of the optional send log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentRecord {
    pub at: SimTime,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub kind: MsgKind,
    pub line: Option<LineAddr>,
    pub bytes: u64,
    /// Scheduled arrival before any reordering; None when dropped at a viral CN.
    pub arrives: Option<SimTime>,
}

impl Fabric {
    pub fn new(cfg: &ClusterConfig, seed: u64) -> Self {
        let endpoints = cfg.num_cns + cfg.num_mns + 1;
        Self {
            one_way: cfg.one_way_latency(),
            gbps: cfg.link_gbps,
            p_reorder: cfg.p_reorder,
            num_cns: cfg.num_cns,
            num_mns: cfg.num_mns,
            egress_free: vec![SimTime::ZERO; endpoints],
            ingress_free: vec![SimTime::ZERO; endpoints],
            viral: vec![false; cfg.num_cns],
            rng: SeededRng::stream(seed, streams::FABRIC),
            last_repl: HashMap::new(),
            counters: FabricCounters { kind_counts: vec![0; MsgKind::COUNT], ..Default::default() },
            per_cn: (0..cfg.num_cns).map(|cn| CnBandwidth { cn: cn as u16, ..Default::default() }).collect(),
            log: None,
        }
    }

    fn port(&self, e: Endpoint) -> Result<usize, SimError> {
        match e {
            Endpoint::Cn(c) if (c as usize) < self.num_cns => Ok(c as usize),
            Endpoint::Mn(m) if (m as usize) < self.num_mns => Ok(self.num_cns + m as usize),
            Endpoint::Switch => Ok(self.num_cns + self.num_mns),
            other => Err(SimError::UnknownDestination(format!("{other:?}"))),
        }
    }

    fn serialization(&self, bytes: u64) -> SimTime {
        SimTime::from_ns_f64(bytes as f64 / self.gbps)
    }

    pub fn one_way(&self) -> SimTime {
        self.one_way
    }

    pub fn is_viral(&self, cn: u16) -> bool {
        self.viral.get(cn as usize).copied().unwrap_or(false)
    }

    /// Sets the Viral_Status bit. Returns false if it was already set.
    pub fn set_viral(&mut self, cn: u16) -> bool {
        !std::mem::replace(&mut self.viral[cn as usize], true)
    }

    /// Sends `msg`, scheduling its delivery as `wrap(msg)` on `queue`.
    pub fn send<P>(
        &mut self,
        queue: &mut EventQueue<P>,
        msg: Message,
        wrap: impl Fn(Message) -> P,
    ) -> Result<(), SimError> {
        let now = queue.now();
        let src = self.port(msg.src)?;
        let dst = self.port(msg.dst)?;
        let bytes = msg.body.size_bytes();
        let class = msg.body.class();
        self.counters.sent += 1;
        self.counters.kind_counts[msg.body.kind() as usize] += 1;
        self.counters.bytes_by_class[class.index()] += bytes;
        let attributed = match (msg.src, msg.dst) {
            (Endpoint::Cn(c), _) | (_, Endpoint::Cn(c)) => Some(c as usize),
            _ => None,
        };
        if let Some(cn) = attributed {
            let w = (now.ps() / BANDWIDTH_WINDOW.ps()) as usize;
            let rec = &mut self.per_cn[cn];
            if rec.windows.len() <= w {
                rec.windows.resize(w + 1, ClassBytes::default());
            }
            rec.windows[w].add(class, bytes);
            rec.total.add(class, bytes);
        }
        let dropped = matches!(msg.dst, Endpoint::Cn(c) if self.viral[c as usize]);
        if self.log.is_some() {
            let ser = self.serialization(bytes);
            let at = (self.egress_free[src].max(now) + ser + self.one_way).max(self.ingress_free[dst] + ser);
            let arrives = (!dropped).then_some(at);
            let log = self.log.as_mut().expect("checked");
            log.push(SentRecord {
                at: now,
                src: msg.src,
                dst: msg.dst,
                kind: msg.body.kind(),
                line: msg.body.line(),
                bytes,
                arrives,
            });
        }
        if let Endpoint::Cn(c) = msg.dst {
            if self.viral[c as usize] {
                self.counters.dropped_viral += 1;
                return Ok(());
            }
        }

        let ser = self.serialization(bytes);
        let departed = self.egress_free[src].max(now) + ser;
        self.egress_free[src] = departed;
        let arrive = departed + self.one_way;
        let deliver = arrive.max(self.ingress_free[dst] + ser);
        self.ingress_free[dst] = deliver;
        let target = msg.dst.component();

        if class != MsgClass::Replication {
            queue.schedule(deliver, target, wrap(msg))?;
            return Ok(());
        }
        let pair = (msg.src, msg.dst);
        let earliest = now + self.one_way + ser;
        if self.p_reorder > 0.0 {
            if let Some(prev) = self.last_repl.get(&pair) {
                if queue.is_pending(prev.handle) && prev.at >= earliest && self.rng.random_bool(self.p_reorder) {
                    let prev = self.last_repl.remove(&pair).expect("present");
                    queue.cancel(prev.handle);
                    queue.schedule(prev.at, target, wrap(msg))?;
                    let handle = queue.schedule(deliver, target, wrap(prev.msg.clone()))?;
                    self.counters.reordered += 1;
                    self.last_repl.insert(pair, PendingRepl { handle, at: deliver, msg: prev.msg });
                    return Ok(());
                }
            }
        }
        let keep = if self.p_reorder > 0.0 { Some(msg.clone()) } else { None };
        let handle = queue.schedule(deliver, target, wrap(msg))?;
        if let Some(msg) = keep {
            self.last_repl.insert(pair, PendingRepl { handle, at: deliver, msg });
        }
        Ok(())
    }

    /// Records that a delivery event fired. Returns false if the target CN is crashed.
    pub fn note_delivered(&mut self, to_dead: bool) {
        self.counters.delivered += 1;
        if to_dead {
            self.counters.delivered_to_dead += 1;
        }
    }

    /// Starts recording every send, including ones dropped at a viral CN.
    pub fn enable_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn sent_log(&self) -> &[SentRecord] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn kind_count(&self, kind: MsgKind) -> u64 {
        self.counters.kind_counts[kind as usize]
    }

    pub fn counters(&self) -> &FabricCounters {
        &self.counters
    }

    pub fn bandwidth_report(&self) -> &[CnBandwidth] {
        &self.per_cn
    }

    pub fn total_bytes(&self) -> ClassBytes {
        let b = &self.counters.bytes_by_class;
        ClassBytes { coherence_bytes: b[0], replication_bytes: b[1], logdump_bytes: b[2], recovery_bytes: b[3] }
    }
}
