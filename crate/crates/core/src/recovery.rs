//! Crash plans, recovery reports and the rule that picks a word's recovered value.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::logging::LogVersion;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrashTrigger {
    At(SimTime),
    /// Fires right after the cluster-wide commit count reaches this value.
    AfterCommits(u64),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashPlan {
    pub victims: Vec<u16>,
    pub trigger: CrashTrigger,
}

impl CrashPlan {
    pub fn at(victim: u16, t: SimTime) -> Self {
        Self { victims: vec![victim], trigger: CrashTrigger::At(t) }
    }
}

fn parse_time(s: &str) -> Option<SimTime> {
    let (num, scale) = [("ps", 1e-3), ("ns", 1.0), ("us", 1e3), ("ms", 1e6), ("s", 1e9)]
        .iter()
        .find_map(|(suffix, scale)| s.strip_suffix(suffix).map(|n| (n, *scale)))?;
    let v: f64 = num.trim().parse().ok()?;
    (v.is_finite() && v >= 0.0).then(|| SimTime::from_ps((v * scale * 1000.0).round() as u64))
}

/// Parses `cn=0,t=12.5ms` or `cn=2+5,after=400` (victims joined with `+`).
impl FromStr for CrashPlan {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut victims = Vec::new();
        let mut trigger = None;
        for part in s.split(',') {
            let (k, v) = part.split_once('=').ok_or_else(|| format!("expected key=value, got `{part}`"))?;
            match k.trim() {
                "cn" => {
                    for c in v.split('+') {
                        victims.push(c.trim().parse::<u16>().map_err(|_| format!("bad CN id `{c}`"))?);
                    }
                }
                "t" => trigger = Some(CrashTrigger::At(parse_time(v.trim()).ok_or_else(|| format!("bad time `{v}`"))?)),
                "after" => {
                    trigger = Some(CrashTrigger::AfterCommits(
                        v.trim().parse().map_err(|_| format!("bad commit count `{v}`"))?,
                    ))
                }
                other => return Err(format!("unknown crash field `{other}`")),
            }
        }
        if victims.is_empty() {
            return Err("crash spec needs cn=<id>".into());
        }
        let trigger = trigger.ok_or("crash spec needs t=<time> or after=<commits>")?;
        Ok(Self { victims, trigger })
    }
}

impl fmt::Display for CrashPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cns: Vec<String> = self.victims.iter().map(u16::to_string).collect();
        match self.trigger {
            CrashTrigger::At(t) => write!(f, "cn={},t={}ns", cns.join("+"), t.as_ns()),
            CrashTrigger::AfterCommits(n) => write!(f, "cn={},after={n}", cns.join("+")),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub id: u64,
    pub cm_cn: u16,
    pub victims: Vec<u16>,
    pub crash_time_ps: u64,
    pub msi_time_ps: u64,
    pub interrupt_done_ps: u64,
    pub init_done_ps: u64,
    pub end_done_ps: u64,
    pub live_cns: u64,
    pub num_mns: u64,
    /// Lines the victims owned (M or E) when recovery ran.
    pub owned_lines: u64,
    /// Lines the victims shared, whose sharer bit was removed.
    pub shared_lines: u64,
    pub repaired_words: u64,
    pub fetch_messages: u64,
    /// Recovery-class messages exchanged, excluding the MSI.
    pub messages: u64,
    pub invalid_entries_skipped: u64,
    pub repair_mismatches: u64,
}

impl RecoveryReport {
    pub fn total_ps(&self) -> u64 {
        self.end_done_ps.saturating_sub(self.msi_time_ps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resolved {
    Log { value: u64, rank: usize },
    Persisted { value: u64 },
    Memory,
}

impl Resolved {
    pub fn value(self) -> Option<u64> {
        match self {
            Resolved::Log { value, .. } | Resolved::Persisted { value } => Some(value),
            Resolved::Memory => None,
        }
    }
}

/// Picks a word's value from the replicas' histories (each newest first, tagged with the
/// unit's rank in the replica group) and the persisted history.
///
/// A list head is stale if any list holds the same update below a newer one. Among the
/// remaining heads, live logs beat persisted segments, DRAM entries beat SRAM-valid ones,
/// then the longer list wins, then the lower rank.
pub fn resolve_word(logs: &[(usize, &[LogVersion])], persisted: &[LogVersion]) -> Resolved {
    let all: Vec<&[LogVersion]> = logs.iter().map(|(_, l)| *l).chain(std::iter::once(persisted)).collect();
    let stale = |v: &LogVersion| all.iter().any(|l| l.iter().skip(1).any(|x| x.same_update(v)));

    // (is_persisted, from_sram, Reverse(len), rank) → value
    let mut heads: Vec<((bool, bool, std::cmp::Reverse<usize>, usize), Resolved, bool)> = Vec::new();
    for (rank, list) in logs {
        if let Some(h) = list.first() {
            heads.push((
                (false, h.from_sram, std::cmp::Reverse(list.len()), *rank),
                Resolved::Log { value: h.value, rank: *rank },
                stale(h),
            ));
        }
    }
    if let Some(h) = persisted.first() {
        heads.push((
            (true, false, std::cmp::Reverse(persisted.len()), usize::MAX),
            Resolved::Persisted { value: h.value },
            stale(h),
        ));
    }
    let pick = |fresh_only: bool| {
        heads.iter().filter(|(_, _, s)| !fresh_only || !*s).min_by_key(|(k, _, _)| *k).map(|(_, r, _)| *r)
    };
    pick(true).or_else(|| pick(false)).unwrap_or(Resolved::Memory)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(txn: u64, value: u64) -> LogVersion {
        LogVersion { core: 0, txn, value, from_sram: false }
    }

    #[test]
    fn agreeing_logs() {
        let a = [v(3, 30), v(2, 20)];
        let b = [v(3, 30)];
        assert_eq!(resolve_word(&[(0, &a), (1, &b)], &[]), Resolved::Log { value: 30, rank: 0 });
    }

    #[test]
    fn lagging_replica_loses() {
        let newer = [v(3, 30), v(2, 20)];
        let older = [v(2, 20), v(1, 10), v(0, 5)];
        assert_eq!(resolve_word(&[(0, &older), (1, &newer)], &[]).value(), Some(30));
    }

    #[test]
    fn persisted_then_memory_fallback() {
        assert_eq!(resolve_word(&[(0, &[])], &[v(1, 10)]), Resolved::Persisted { value: 10 });
        assert_eq!(resolve_word(&[(0, &[]), (1, &[])], &[]), Resolved::Memory);
    }

    #[test]
    fn newer_persisted_beats_stale_retained_entry() {
        let log = [v(1, 10)];
        let persisted = [v(2, 20), v(1, 10)];
        assert_eq!(resolve_word(&[(0, &log)], &persisted).value(), Some(20));
    }

    #[test]
    fn divergent_tie_break() {
        let mut s = v(5, 50);
        s.from_sram = true;
        let sram = [s];
        let dram = [v(4, 40)];
        assert_eq!(resolve_word(&[(0, &sram), (1, &dram)], &[]).value(), Some(40));
        let long = [v(6, 60), v(1, 1)];
        let short = [v(7, 70)];
        assert_eq!(resolve_word(&[(1, &short), (2, &long)], &[]).value(), Some(60));
    }

    #[test]
    fn crash_spec_parsing() {
        let p: CrashPlan = "cn=0,t=12.5ms".parse().unwrap();
        assert_eq!(p, CrashPlan::at(0, SimTime::from_us(12_500)));
        let p: CrashPlan = "cn=2+5,after=400".parse().unwrap();
        assert_eq!(p.victims, vec![2, 5]);
        assert_eq!(p.trigger, CrashTrigger::AfterCommits(400));
        assert!("t=1ms".parse::<CrashPlan>().is_err());
        assert!("cn=1,t=soon".parse::<CrashPlan>().is_err());
        let back: CrashPlan = p.to_string().parse().unwrap();
        assert_eq!(back, p);
    }
}
