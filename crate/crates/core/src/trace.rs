//! Per-core operation traces and their text format.
//!
//! ```text
//! # cores 2
//! c0 LD 0x800001000040 R
//! c0 ST 0x1000000000 L
//! c0 LOCK 3
//! c0 UNLOCK 3
//! c0 BAR 0
//! c1 CMP 12
//! c1 BAR 0
//! ```
//!
//! Lines for different cores may interleave; each core's ops keep file order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::addr;
use crate::error::TraceError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraceOp {
    Load { addr: u64, remote: bool },
    Store { addr: u64, remote: bool },
    LockAcq { sync_id: u32 },
    LockRel { sync_id: u32 },
    Barrier { sync_id: u32 },
    Compute { cycles: u32 },
}

impl TraceOp {
    pub fn is_memory(&self) -> bool {
        matches!(self, TraceOp::Load { .. } | TraceOp::Store { .. })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub cores: Vec<Vec<TraceOp>>,
}

impl Trace {
    pub fn new(cores: Vec<Vec<TraceOp>>) -> Self {
        Self { cores }
    }

    pub fn empty(num_cores: usize) -> Self {
        Self { cores: vec![Vec::new(); num_cores] }
    }

    pub fn num_cores(&self) -> usize {
        self.cores.len()
    }

    pub fn total_ops(&self) -> usize {
        self.cores.iter().map(Vec::len).sum()
    }

    /// Checks that every barrier id occurs equally often on every core.
    pub fn check_barriers(&self) -> Result<(), TraceError> {
        let counts: Vec<BTreeMap<u32, usize>> = self
            .cores
            .iter()
            .map(|ops| {
                let mut m = BTreeMap::new();
                for op in ops {
                    if let TraceOp::Barrier { sync_id } = op {
                        *m.entry(*sync_id).or_insert(0) += 1;
                    }
                }
                m
            })
            .collect();
        let ids: std::collections::BTreeSet<u32> = counts.iter().flat_map(|m| m.keys().copied()).collect();
        for id in ids {
            let expected = counts.first().and_then(|m| m.get(&id)).copied().unwrap_or(0);
            for (core, m) in counts.iter().enumerate() {
                let found = m.get(&id).copied().unwrap_or(0);
                if found != expected {
                    return Err(TraceError::BarrierMismatch { sync_id: id, core, expected, found });
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.total_ops() * 24);
        let _ = writeln!(out, "# cores {}", self.cores.len());
        for (core, ops) in self.cores.iter().enumerate() {
            for op in ops {
                let _ = match *op {
                    TraceOp::Load { addr, remote } => {
                        writeln!(out, "c{core} LD {addr:#x} {}", if remote { 'R' } else { 'L' })
                    }
                    TraceOp::Store { addr, remote } => {
                        writeln!(out, "c{core} ST {addr:#x} {}", if remote { 'R' } else { 'L' })
                    }
                    TraceOp::LockAcq { sync_id } => writeln!(out, "c{core} LOCK {sync_id}"),
                    TraceOp::LockRel { sync_id } => writeln!(out, "c{core} UNLOCK {sync_id}"),
                    TraceOp::Barrier { sync_id } => writeln!(out, "c{core} BAR {sync_id}"),
                    TraceOp::Compute { cycles } => writeln!(out, "c{core} CMP {cycles}"),
                };
            }
        }
        out
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }

    pub fn parse_str(text: &str) -> Result<Self, TraceError> {
        let mut declared: Option<usize> = None;
        let mut cores: Vec<Vec<TraceOp>> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let err = |reason: String| TraceError::Parse { line: lineno, reason };
            let trimmed = raw.trim();
            if let Some(comment) = trimmed.strip_prefix('#') {
                let mut words = comment.split_whitespace();
                if words.next() == Some("cores") {
                    let n = words
                        .next()
                        .and_then(|w| w.parse().ok())
                        .ok_or_else(|| err("malformed `# cores` header".into()))?;
                    declared = Some(n);
                }
                continue;
            }
            let content = trimmed.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let core: usize = fields[0]
                .strip_prefix('c')
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| err(format!("bad core field `{}`", fields[0])))?;
            let mnemonic = *fields.get(1).ok_or_else(|| err("missing op mnemonic".into()))?;
            let arg =
                |i: usize| fields.get(i).copied().ok_or_else(|| err(format!("`{mnemonic}` is missing an operand")));
            let sync = |s: &str| s.parse::<u32>().map_err(|_| err(format!("bad sync id `{s}`")));
            let op = match mnemonic {
                "LD" | "ST" => {
                    let a = arg(2)?;
                    let hex = a.strip_prefix("0x").or_else(|| a.strip_prefix("0X")).unwrap_or(a);
                    let address = u64::from_str_radix(hex, 16).map_err(|_| err(format!("bad address `{a}`")))?;
                    let remote = match arg(3)? {
                        "R" => true,
                        "L" => false,
                        other => return Err(err(format!("expected R or L, found `{other}`"))),
                    };
                    if remote != addr::is_remote(address) {
                        return Err(err(format!(
                            "address {address:#x} disagrees with its {} flag",
                            if remote { 'R' } else { 'L' }
                        )));
                    }
                    if mnemonic == "LD" {
                        TraceOp::Load { addr: address, remote }
                    } else {
                        TraceOp::Store { addr: address, remote }
                    }
                }
                "LOCK" => TraceOp::LockAcq { sync_id: sync(arg(2)?)? },
                "UNLOCK" => TraceOp::LockRel { sync_id: sync(arg(2)?)? },
                "BAR" => TraceOp::Barrier { sync_id: sync(arg(2)?)? },
                "CMP" => {
                    let a = arg(2)?;
                    TraceOp::Compute { cycles: a.parse().map_err(|_| err(format!("bad cycle count `{a}`")))? }
                }
                other => return Err(err(format!("unknown op mnemonic `{other}`"))),
            };
            if cores.len() <= core {
                cores.resize_with(core + 1, Vec::new);
            }
            cores[core].push(op);
        }
        if let Some(n) = declared {
            if cores.len() > n {
                return Err(TraceError::Parse {
                    line: 0,
                    reason: format!("trace uses core {} but declares {n} cores", cores.len() - 1),
                });
            }
            cores.resize_with(n, Vec::new);
        }
        let trace = Trace { cores };
        trace.check_barriers()?;
        Ok(trace)
    }
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace, TraceError> {
    let text = std::fs::read_to_string(path)?;
    Trace::parse_str(&text)
}
