//! Cluster configuration: defaults follow the evaluated architecture
//! (16 CNs, 16 MNs, 4 cores per CN, 72-entry store buffer, Nr = 3, ...).
//!
//! The file format is flat `key = value` lines with `#` comments. Keys are
//! the field names below; cache geometry is flattened into `l1_size`,
//! `l1_assoc`, `l1_latency` and the matching `llc_*` keys. Sizes accept
//! `KiB`/`MiB`/`GiB` suffixes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::error::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    /// Write-back caching, no replication.
    #[serde(rename = "WB")]
    Wb,
    /// Write-through of every remote store to a persistent MN.
    #[serde(rename = "WT")]
    Wt,
    /// Replication starts once the coherence transaction completes at the SB head.
    #[serde(rename = "BASELINE")]
    Baseline,
    /// Replication starts at the SB head, overlapping coherence.
    #[serde(rename = "PARALLEL")]
    Parallel,
    /// Replication starts when the store enters the SB.
    #[serde(rename = "PROACTIVE")]
    Proactive,
}

impl Protocol {
    pub const ALL: [Protocol; 5] =
        [Protocol::Wb, Protocol::Wt, Protocol::Baseline, Protocol::Parallel, Protocol::Proactive];
    pub const REPLICATED: [Protocol; 3] = [Protocol::Baseline, Protocol::Parallel, Protocol::Proactive];

    pub fn replicates(self) -> bool {
        matches!(self, Protocol::Baseline | Protocol::Parallel | Protocol::Proactive)
    }

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Wb => "WB",
            Protocol::Wt => "WT",
            Protocol::Baseline => "BASELINE",
            Protocol::Parallel => "PARALLEL",
            Protocol::Proactive => "PROACTIVE",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "WB" => Ok(Protocol::Wb),
            "WT" => Ok(Protocol::Wt),
            "BASELINE" => Ok(Protocol::Baseline),
            "PARALLEL" => Ok(Protocol::Parallel),
            "PROACTIVE" => Ok(Protocol::Proactive),
            other => Err(format!("unknown protocol `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheGeometry {
    pub size_bytes: u64,
    pub assoc: usize,
    pub latency_cycles: u64,
}

impl CacheGeometry {
    pub fn sets(&self, line_bytes: u64) -> usize {
        (self.size_bytes / line_bytes / self.assoc as u64).max(1) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub num_cns: usize,
    pub num_mns: usize,
    pub cores_per_cn: usize,
    pub sb_entries: usize,
    pub lq_entries: usize,
    pub l1: CacheGeometry,
    pub llc: CacheGeometry,
    pub line_bytes: u64,
    pub word_bytes: u64,
    pub cpu_mhz: u64,
    pub lu_mhz: u64,
    pub dram_ns: u64,
    pub pmem_ns: u64,
    #[serde(rename = "link_GBps")]
    pub link_gbps: f64,
    pub net_rtt_ns: u64,
    pub sram_log_bytes: u64,
    pub sram_access_ns: u64,
    pub dram_log_bytes: u64,
    pub dump_period_us: f64,
    pub replication_factor: usize,
    pub compression_ratio: f64,
    pub protocol: Protocol,
    pub coalescing_enabled: bool,
    /// Probability that a replication message swaps with the previous
    /// undelivered message of the same (src, dst) pair.
    pub p_reorder: f64,
    /// Silence after which the switch declares a CN failed.
    pub detect_timeout_ns: u64,
    /// How long a REPL may wait for SRAM space before spilling.
    pub sram_spill_timeout_ns: u64,
    /// Software handler latency per recovery step.
    pub recovery_handler_ns: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            num_cns: 16,
            num_mns: 16,
            cores_per_cn: 4,
            sb_entries: 72,
            lq_entries: 128,
            l1: CacheGeometry { size_bytes: 48 << 10, assoc: 12, latency_cycles: 5 },
            llc: CacheGeometry { size_bytes: 8 << 20, assoc: 16, latency_cycles: 36 },
            line_bytes: 64,
            word_bytes: 8,
            cpu_mhz: 2400,
            lu_mhz: 500,
            dram_ns: 45,
            pmem_ns: 500,
            link_gbps: 160.0,
            net_rtt_ns: 200,
            sram_log_bytes: 4096,
            sram_access_ns: 4,
            dram_log_bytes: 18 << 20,
            dump_period_us: 2500.0,
            replication_factor: 3,
            compression_ratio: 5.8,
            protocol: Protocol::Proactive,
            coalescing_enabled: true,
            p_reorder: 0.1,
            detect_timeout_ns: 10_000,
            sram_spill_timeout_ns: 2_000,
            recovery_handler_ns: 100,
        }
    }
}

/// Every accepted key, in file order.
pub const CONFIG_KEYS: &[&str] = &[
    "num_cns",
    "num_mns",
    "cores_per_cn",
    "sb_entries",
    "lq_entries",
    "l1_size",
    "l1_assoc",
    "l1_latency",
    "llc_size",
    "llc_assoc",
    "llc_latency",
    "line_bytes",
    "word_bytes",
    "cpu_mhz",
    "lu_mhz",
    "dram_ns",
    "pmem_ns",
    "link_GBps",
    "net_rtt_ns",
    "sram_log_bytes",
    "sram_access_ns",
    "dram_log_bytes",
    "dump_period_us",
    "replication_factor",
    "compression_ratio",
    "protocol",
    "coalescing_enabled",
    "p_reorder",
    "detect_timeout_ns",
    "sram_spill_timeout_ns",
    "recovery_handler_ns",
];

fn parse_size(s: &str) -> Option<u64> {
    let s = s.trim();
    let (digits, mult) = if let Some(d) = s.strip_suffix("GiB") {
        (d, 1u64 << 30)
    } else if let Some(d) = s.strip_suffix("MiB") {
        (d, 1 << 20)
    } else if let Some(d) = s.strip_suffix("KiB") {
        (d, 1 << 10)
    } else if let Some(d) = s.strip_suffix('B') {
        (d, 1)
    } else {
        (s, 1)
    };
    digits.trim().parse::<u64>().ok().map(|v| v * mult)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

impl ClusterConfig {
    /// Sets one key from its textual value. `Nr` is accepted as an alias of
    /// `replication_factor`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        let bad = || ConfigError::InvalidValue { key: key.to_string(), value: value.to_string() };
        let size = || parse_size(value).ok_or_else(bad);
        let count = || value.parse::<usize>().map_err(|_| bad());
        let float =
            || value.parse::<f64>().map_err(|_| bad()).and_then(|v| if v.is_finite() { Ok(v) } else { Err(bad()) });
        match key {
            "num_cns" => self.num_cns = count()?,
            "num_mns" => self.num_mns = count()?,
            "cores_per_cn" => self.cores_per_cn = count()?,
            "sb_entries" => self.sb_entries = count()?,
            "lq_entries" => self.lq_entries = count()?,
            "l1_size" => self.l1.size_bytes = size()?,
            "l1_assoc" => self.l1.assoc = count()?,
            "l1_latency" => self.l1.latency_cycles = size()?,
            "llc_size" => self.llc.size_bytes = size()?,
            "llc_assoc" => self.llc.assoc = count()?,
            "llc_latency" => self.llc.latency_cycles = size()?,
            "line_bytes" => self.line_bytes = size()?,
            "word_bytes" => self.word_bytes = size()?,
            "cpu_mhz" => self.cpu_mhz = size()?,
            "lu_mhz" => self.lu_mhz = size()?,
            "dram_ns" => self.dram_ns = size()?,
            "pmem_ns" => self.pmem_ns = size()?,
            "link_GBps" | "link_gbps" => self.link_gbps = float()?,
            "net_rtt_ns" => self.net_rtt_ns = size()?,
            "sram_log_bytes" => self.sram_log_bytes = size()?,
            "sram_access_ns" => self.sram_access_ns = size()?,
            "dram_log_bytes" => self.dram_log_bytes = size()?,
            "dump_period_us" => self.dump_period_us = float()?,
            "replication_factor" | "Nr" => self.replication_factor = count()?,
            "compression_ratio" => self.compression_ratio = float()?,
            "protocol" => self.protocol = value.parse().map_err(|_| bad())?,
            "coalescing_enabled" => self.coalescing_enabled = parse_bool(value).ok_or_else(bad)?,
            "p_reorder" => self.p_reorder = float()?,
            "detect_timeout_ns" => self.detect_timeout_ns = size()?,
            "sram_spill_timeout_ns" => self.sram_spill_timeout_ns = size()?,
            "recovery_handler_ns" => self.recovery_handler_ns = size()?,
            _ => return Err(ConfigError::UnknownKey { key: key.to_string(), line: 0 }),
        }
        Ok(())
    }

    /// Parses `key = value` text on top of the defaults and validates the result.
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ClusterConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Malformed { line: idx + 1 })?;
            cfg.set(key.trim(), value).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { key, line: idx + 1 },
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let range = |key, reason: String| Err(ConfigError::Range { key, reason });
        if self.replication_factor < 1 || self.replication_factor > self.num_cns {
            return range(
                "replication_factor",
                format!("Nr = {} must satisfy 1 <= Nr <= num_cns = {}", self.replication_factor, self.num_cns),
            );
        }
        let positive: [(&'static str, u64); 19] = [
            ("num_cns", self.num_cns as u64),
            ("num_mns", self.num_mns as u64),
            ("cores_per_cn", self.cores_per_cn as u64),
            ("sb_entries", self.sb_entries as u64),
            ("lq_entries", self.lq_entries as u64),
            ("l1_size", self.l1.size_bytes),
            ("l1_assoc", self.l1.assoc as u64),
            ("llc_size", self.llc.size_bytes),
            ("llc_assoc", self.llc.assoc as u64),
            ("line_bytes", self.line_bytes),
            ("word_bytes", self.word_bytes),
            ("cpu_mhz", self.cpu_mhz),
            ("lu_mhz", self.lu_mhz),
            ("net_rtt_ns", self.net_rtt_ns),
            ("sram_log_bytes", self.sram_log_bytes),
            ("dram_log_bytes", self.dram_log_bytes),
            ("detect_timeout_ns", self.detect_timeout_ns),
            ("dram_ns", self.dram_ns),
            ("pmem_ns", self.pmem_ns),
        ];
        for (key, v) in positive {
            if v == 0 {
                return range(key, "must be positive".into());
            }
        }
        if self.line_bytes % self.word_bytes != 0 {
            return range(
                "line_bytes",
                format!("{} is not a multiple of word_bytes {}", self.line_bytes, self.word_bytes),
            );
        }
        // Word masks are 8 bits wide.
        if self.line_bytes != 64 || self.word_bytes != 8 {
            return range("line_bytes", "only 64-byte lines of 8-byte words are modeled".into());
        }
        // Directory sharer sets are 64-bit masks.
        if self.num_cns > 64 {
            return range("num_cns", "at most 64 CNs are supported".into());
        }
        if self.num_mns > u16::MAX as usize || self.cores_per_cn > 255 {
            return range("num_mns", "cluster too large".into());
        }
        if self.l1.size_bytes < self.line_bytes * self.l1.assoc as u64 {
            return range("l1_size", "smaller than one set".into());
        }
        if self.llc.size_bytes < self.line_bytes * self.llc.assoc as u64 {
            return range("llc_size", "smaller than one set".into());
        }
        if self.link_gbps <= 0.0 {
            return range("link_GBps", "must be positive".into());
        }
        if self.dump_period_us <= 0.0 {
            return range("dump_period_us", "must be positive".into());
        }
        if self.compression_ratio < 1.0 {
            return range("compression_ratio", "must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.p_reorder) {
            return range("p_reorder", "must lie in [0, 1]".into());
        }
        if self.sram_log_bytes < SRAM_ENTRY_BYTES * 8 {
            return range("sram_log_bytes", "must hold at least one full-line REPL".into());
        }
        Ok(())
    }

    pub fn total_cores(&self) -> usize {
        self.num_cns * self.cores_per_cn
    }

    pub fn words_per_line(&self) -> usize {
        (self.line_bytes / self.word_bytes) as usize
    }

    pub fn core_cycles(&self, cycles: u64) -> SimTime {
        SimTime::from_cycles(cycles, self.cpu_mhz)
    }

    pub fn lu_cycles(&self, cycles: u64) -> SimTime {
        SimTime::from_cycles(cycles, self.lu_mhz)
    }

    pub fn one_way_latency(&self) -> SimTime {
        SimTime::from_ns_f64(self.net_rtt_ns as f64 / 2.0)
    }

    /// Serialization delay of `bytes` on one link.
    pub fn serialization(&self, bytes: u64) -> SimTime {
        // bytes / (GB/s) = ns
        SimTime::from_ns_f64(bytes as f64 / self.link_gbps)
    }

    pub fn dump_period(&self) -> SimTime {
        SimTime::from_ns_f64(self.dump_period_us * 1_000.0)
    }

    pub fn sram_capacity_entries(&self) -> usize {
        (self.sram_log_bytes / SRAM_ENTRY_BYTES) as usize
    }

    /// Renders the configuration in the file format accepted by [`ClusterConfig::parse_str`].
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        put("num_cns", self.num_cns.to_string());
        put("num_mns", self.num_mns.to_string());
        put("cores_per_cn", self.cores_per_cn.to_string());
        put("sb_entries", self.sb_entries.to_string());
        put("lq_entries", self.lq_entries.to_string());
        put("l1_size", self.l1.size_bytes.to_string());
        put("l1_assoc", self.l1.assoc.to_string());
        put("l1_latency", self.l1.latency_cycles.to_string());
        put("llc_size", self.llc.size_bytes.to_string());
        put("llc_assoc", self.llc.assoc.to_string());
        put("llc_latency", self.llc.latency_cycles.to_string());
        put("line_bytes", self.line_bytes.to_string());
        put("word_bytes", self.word_bytes.to_string());
        put("cpu_mhz", self.cpu_mhz.to_string());
        put("lu_mhz", self.lu_mhz.to_string());
        put("dram_ns", self.dram_ns.to_string());
        put("pmem_ns", self.pmem_ns.to_string());
        put("link_GBps", self.link_gbps.to_string());
        put("net_rtt_ns", self.net_rtt_ns.to_string());
        put("sram_log_bytes", self.sram_log_bytes.to_string());
        put("sram_access_ns", self.sram_access_ns.to_string());
        put("dram_log_bytes", self.dram_log_bytes.to_string());
        put("dump_period_us", self.dump_period_us.to_string());
        put("replication_factor", self.replication_factor.to_string());
        put("compression_ratio", self.compression_ratio.to_string());
        put("protocol", self.protocol.to_string());
        put("coalescing_enabled", self.coalescing_enabled.to_string());
        put("p_reorder", self.p_reorder.to_string());
        put("detect_timeout_ns", self.detect_timeout_ns.to_string());
        put("sram_spill_timeout_ns", self.sram_spill_timeout_ns.to_string());
        put("recovery_handler_ns", self.recovery_handler_ns.to_string());
        out
    }
}

/// SRAM Log Buffer entry: requester, timestamp, address, value and valid bit.
pub const SRAM_ENTRY_BYTES: u64 = 24;
/// DRAM log entry: 2 B requester, 6 B address with word index, 8 B value.
pub const DRAM_ENTRY_BYTES: u64 = 16;

pub fn parse_config(path: impl AsRef<Path>) -> Result<ClusterConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    ClusterConfig::parse_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ClusterConfig::parse_str("").unwrap();
        assert_eq!(cfg.num_cns, 16);
        assert_eq!(cfg.num_mns, 16);
        assert_eq!(cfg.replication_factor, 3);
        assert_eq!(cfg.dump_period(), SimTime::from_us(2500));
        assert_eq!(cfg.sb_entries, 72);
        assert_eq!(cfg.lq_entries, 128);
        assert_eq!(cfg.dram_log_bytes, 18 << 20);
        assert_eq!(cfg, ClusterConfig::default());
    }

    #[test]
    fn nr_out_of_range() {
        assert!(matches!(
            ClusterConfig::parse_str("replication_factor = 0"),
            Err(ConfigError::Range { key: "replication_factor", .. })
        ));
        assert!(matches!(ClusterConfig::parse_str("Nr = 17\nnum_cns = 16"), Err(ConfigError::Range { .. })));
    }

    #[test]
    fn unknown_key_names_line() {
        match ClusterConfig::parse_str("# header\nnum_cns = 4\nbogus = 1\n") {
            Err(ConfigError::UnknownKey { key, line }) => {
                assert_eq!(key, "bogus");
                assert_eq!(line, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_value_names_key() {
        match ClusterConfig::parse_str("protocol = FAST") {
            Err(ConfigError::InvalidValue { key, .. }) => assert_eq!(key, "protocol"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sizes_with_suffix() {
        let cfg = ClusterConfig::parse_str("llc_size = 1MiB\nl1_size = 4KiB\nl1_assoc = 2").unwrap();
        assert_eq!(cfg.llc.size_bytes, 1 << 20);
        assert_eq!(cfg.l1.sets(64), 32);
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = ClusterConfig::default();
        cfg.protocol = Protocol::Wt;
        cfg.p_reorder = 0.5;
        cfg.num_cns = 8;
        assert_eq!(ClusterConfig::parse_str(&cfg.to_kv_string()).unwrap(), cfg);
    }

    #[test]
    fn link_arithmetic() {
        let cfg = ClusterConfig::default();
        assert_eq!(cfg.one_way_latency(), SimTime::from_ns(100));
        assert_eq!(cfg.serialization(64), SimTime::from_ps(400));
        assert_eq!(cfg.core_cycles(5), SimTime::from_ps(2084));
    }
}
