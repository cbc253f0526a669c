//! Logical address layout.
//!
//! Bit 47 set marks the MN-backed shared range; clear means CN-local memory.
//! Remote lines are interleaved across MNs round-robin by `(addr / 64) mod num_mns`.

pub const REMOTE_BIT: u64 = 1 << 47;
pub const LINE_BYTES: u64 = 64;
pub const WORD_BYTES: u64 = 8;
pub const WORDS_PER_LINE: usize = 8;

pub type LineAddr = u64;
pub type LineData = [u64; WORDS_PER_LINE];

pub fn is_remote(addr: u64) -> bool {
    addr & REMOTE_BIT != 0
}

pub fn line_of(addr: u64) -> LineAddr {
    addr & !(LINE_BYTES - 1)
}

pub fn word_index(addr: u64) -> usize {
    ((addr / WORD_BYTES) % WORDS_PER_LINE as u64) as usize
}

pub fn word_addr(line: LineAddr, word: usize) -> u64 {
    line + word as u64 * WORD_BYTES
}

/// Line number used by the interleaving and replica-group hashes.
pub fn line_number(line: LineAddr) -> u64 {
    line / LINE_BYTES
}

pub fn home_mn(line: LineAddr, num_mns: usize) -> usize {
    (line_number(line) % num_mns as u64) as usize
}

// Regions used by the workload generator.
pub const SHARED_DATA_BASE: u64 = REMOTE_BIT | 0x0100_0000;
pub const SHARED_READONLY_BASE: u64 = REMOTE_BIT | 0x4000_0000;
pub const LOCK_BASE: u64 = REMOTE_BIT | 0x7000_0000;
pub const LOCK_DATA_BASE: u64 = REMOTE_BIT | 0x7100_0000;
pub const BARRIER_BASE: u64 = REMOTE_BIT | 0x7800_0000;
pub const LOCAL_BASE: u64 = 0x10_0000_0000;

pub fn lock_line(sync_id: u32) -> LineAddr {
    LOCK_BASE + sync_id as u64 * LINE_BYTES
}

pub fn barrier_line(sync_id: u32) -> LineAddr {
    BARRIER_BASE + sync_id as u64 * LINE_BYTES
}
