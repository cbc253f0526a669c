//! Golden record of committed remote stores, kept outside the modeled system.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::addr::{line_of, word_index, LineAddr};
use crate::engine::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordUpdate {
    pub word: u8,
    pub value: u64,
    pub time_ps: u64,
    pub core: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub addr: u64,
    pub expected: u64,
    pub found: u64,
    pub context: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checked_words: u64,
    pub mismatches: u64,
    /// First few mismatches.
    pub diff: Vec<Mismatch>,
    pub residue: Vec<String>,
    pub multiple_owners: Vec<String>,
}

const DIFF_LIMIT: usize = 16;

impl VerifyReport {
    pub fn new() -> Self {
        Self { passed: true, ..Default::default() }
    }

    pub fn mismatch(&mut self, m: Mismatch) {
        self.passed = false;
        self.mismatches += 1;
        if self.diff.len() < DIFF_LIMIT {
            self.diff.push(m);
        }
    }

    pub fn residue(&mut self, what: String) {
        self.passed = false;
        if self.residue.len() < DIFF_LIMIT {
            self.residue.push(what);
        }
    }

    pub fn multiple_owner(&mut self, what: String) {
        self.passed = false;
        if self.multiple_owners.len() < DIFF_LIMIT {
            self.multiple_owners.push(what);
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GoldenHistory {
    per_line: BTreeMap<LineAddr, Vec<WordUpdate>>,
    last: HashMap<u64, u64>,
    inflight: HashMap<u64, Vec<u64>>,
    commits: u64,
}

impl GoldenHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_commit(&mut self, addr: u64, value: u64, time: SimTime, core: u32) {
        let word = word_index(addr) as u8;
        self.per_line.entry(line_of(addr)).or_default().push(WordUpdate { word, value, time_ps: time.ps(), core });
        self.last.insert(addr, value);
        self.commits += 1;
    }

    /// Records an update that was replicated (or about to be) but not committed at a crash.
    pub fn record_inflight(&mut self, addr: u64, value: u64) {
        self.inflight.entry(addr).or_default().push(value);
    }

    pub fn commits(&self) -> u64 {
        self.commits
    }

    pub fn history(&self, line: LineAddr) -> &[WordUpdate] {
        self.per_line.get(&line).map_or(&[], Vec::as_slice)
    }

    pub fn last_committed(&self, addr: u64) -> Option<u64> {
        self.last.get(&addr).copied()
    }

    /// Expected value of a never-written word is zero.
    pub fn expected(&self, addr: u64) -> u64 {
        self.last_committed(addr).unwrap_or(0)
    }

    pub fn allowed(&self, addr: u64, value: u64) -> bool {
        value == self.expected(addr) || self.inflight.get(&addr).is_some_and(|v| v.contains(&value))
    }

    /// Every word ever committed, in address order.
    pub fn words(&self) -> Vec<u64> {
        let mut w: Vec<u64> = self.last.keys().copied().collect();
        w.sort_unstable();
        w
    }

    /// Checks a memory image (given as a lookup) against the final committed values.
    pub fn verify_image(&self, image: impl Fn(u64) -> u64, report: &mut VerifyReport, context: &str) {
        for addr in self.words() {
            let found = image(addr);
            report.checked_words += 1;
            if !self.allowed(addr, found) {
                report.mismatch(Mismatch { addr, expected: self.expected(addr), found, context: context.to_string() });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_value_and_inflight() {
        let mut g = GoldenHistory::new();
        g.record_commit(0x48, 1, SimTime::from_ns(1), 0);
        g.record_commit(0x48, 2, SimTime::from_ns(2), 0);
        assert_eq!(g.expected(0x48), 2);
        assert!(!g.allowed(0x48, 1));
        g.record_inflight(0x48, 3);
        assert!(g.allowed(0x48, 3));
        assert_eq!(g.history(0x40).len(), 2);
        assert_eq!(g.expected(0x50), 0);
    }

    #[test]
    fn verify_reports_diff() {
        let mut g = GoldenHistory::new();
        g.record_commit(0x40, 7, SimTime::ZERO, 1);
        g.record_commit(0x80, 8, SimTime::ZERO, 1);
        let mut r = VerifyReport::new();
        g.verify_image(|a| if a == 0x40 { 7 } else { 0 }, &mut r, "end");
        assert!(!r.passed);
        assert_eq!(r.mismatches, 1);
        assert_eq!(r.diff[0].addr, 0x80);
        assert_eq!(r.checked_words, 2);
    }
}
