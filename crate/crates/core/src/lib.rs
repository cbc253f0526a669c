//! Deterministic discrete-event simulator of a disaggregated shared-memory
//! cluster: compute nodes with private caches, memory nodes with a directory,
//! replicated write-back logging, crash detection and recovery.

pub mod addr;
pub mod cache;
pub mod config;
pub mod directory;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod fabric;
pub mod logging;
pub mod metrics;
pub mod node;
pub mod oracle;
pub mod recovery;
pub mod replication;
pub mod sim;
pub mod trace;
pub mod workload;

pub use config::{ClusterConfig, Protocol};
pub use engine::{ComponentId, SimTime};
pub use error::{ConfigError, SimError, SpecError, TraceError};
pub use experiment::{run, run_trace};
pub use metrics::RunResult;
pub use recovery::CrashPlan;
pub use sim::{SimOptions, Simulation};
pub use trace::{Trace, TraceOp};
pub use workload::{generate_trace, WorkloadSpec};
