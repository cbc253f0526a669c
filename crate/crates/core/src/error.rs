use std::io;

use thiserror::Error;

use crate::engine::SimTime;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown configuration key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: malformed entry, expected `key = value`")]
    Malformed { line: usize },
    #[error("invalid value `{value}` for key `{key}`")]
    InvalidValue { key: String, value: String },
    #[error("`{key}` out of range: {reason}")]
    Range { key: &'static str, reason: String },
    #[error("cannot read config: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("barrier {sync_id} appears {expected} times on core 0 but {found} times on core {core}")]
    BarrierMismatch { sync_id: u32, core: usize, expected: usize, found: usize },
    #[error("cannot read trace: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("`{field}` must lie in [0, 1], got {value}")]
    Fraction { field: &'static str, value: f64 },
    #[error("invalid workload: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("event scheduled at {at} but the clock is already at {now}")]
    SchedulingInPast { at: SimTime, now: SimTime },
    #[error("deadlock at {at}: {}", blocked.join("; "))]
    Deadlock { at: SimTime, blocked: Vec<String> },
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("DRAM log of CN{cn} overflowed ({bytes} bytes, capacity {capacity})")]
    DramLogOverflow { cn: u16, bytes: u64, capacity: u64 },
    #[error("unknown destination {0}")]
    UnknownDestination(String),
    #[error("recovery did not finish: {0}")]
    RecoveryTimeout(String),
    #[error("trace has {trace} cores but the cluster has {cluster}")]
    TraceShape { trace: usize, cluster: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Spec(#[from] SpecError),
}
