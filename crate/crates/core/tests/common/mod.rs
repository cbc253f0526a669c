#![allow(dead_code)]

use std::collections::BTreeMap;

use dsm_core::addr::{line_of, word_index, LineAddr, LineData};
use dsm_core::workload::store_value;
use dsm_core::{ClusterConfig, Protocol, Trace, TraceOp};

/// Final value of every remote word, derived from the trace alone.
///
/// In a data-race-free trace each word has one writer between consecutive
/// barriers, so the last write is the one with the highest barrier phase and,
/// within that phase, the highest op index of its only writer.
pub fn static_final_image(trace: &Trace) -> BTreeMap<LineAddr, LineData> {
    let mut last: BTreeMap<u64, (u32, usize, usize)> = BTreeMap::new();
    for (core, ops) in trace.cores.iter().enumerate() {
        let mut phase = 0u32;
        for (i, op) in ops.iter().enumerate() {
            match *op {
                TraceOp::Barrier { .. } => phase += 1,
                TraceOp::Store { addr, remote: true } => {
                    let e = last.entry(addr).or_insert((phase, core, i));
                    if (phase, i) >= (e.0, e.2) {
                        assert!(phase > e.0 || e.1 == core, "two writers of {addr:#x} in phase {phase}");
                        *e = (phase, core, i);
                    }
                }
                _ => {}
            }
        }
    }
    let mut image: BTreeMap<LineAddr, LineData> = BTreeMap::new();
    for (addr, (_, core, i)) in last {
        image.entry(line_of(addr)).or_insert([0; 8])[word_index(addr)] = store_value(core, i);
    }
    image.retain(|_, d| d.iter().any(|&w| w != 0));
    image
}

pub fn small_cfg(protocol: Protocol) -> ClusterConfig {
    let mut c = ClusterConfig::default();
    c.num_cns = 8;
    c.num_mns = 4;
    c.cores_per_cn = 2;
    c.protocol = protocol;
    c
}

pub fn tiny_cfg(protocol: Protocol, num_cns: usize, cores: usize) -> ClusterConfig {
    let mut c = ClusterConfig::default();
    c.num_cns = num_cns;
    c.num_mns = 2;
    c.cores_per_cn = cores;
    c.replication_factor = c.replication_factor.min(num_cns);
    c.protocol = protocol;
    c
}

/// A trace where core 0 runs `ops` and every other core idles.
pub fn solo(num_cores: usize, ops: Vec<TraceOp>) -> Trace {
    let mut cores = vec![Vec::new(); num_cores];
    cores[0] = ops;
    Trace::new(cores)
}

pub fn st(addr: u64) -> TraceOp {
    TraceOp::Store { addr, remote: true }
}

pub fn ld(addr: u64) -> TraceOp {
    TraceOp::Load { addr, remote: true }
}
