mod common;

use dsm_core::addr::{LOCAL_BASE, SHARED_DATA_BASE};
use dsm_core::fabric::{Endpoint, MsgKind, SentRecord};
use dsm_core::{ClusterConfig, Protocol, SimOptions, SimTime, Simulation, Trace, TraceOp};

use common::{ld, solo, st, tiny_cfg};

fn logged(cfg: ClusterConfig, trace: Trace) -> Simulation {
    let mut sim = Simulation::new(cfg, trace, SimOptions { log_messages: true, ..Default::default() }).unwrap();
    sim.run().unwrap();
    assert!(sim.verification().passed, "{:?}", sim.verification());
    sim
}

fn of_kind(sim: &Simulation, kind: MsgKind) -> Vec<SentRecord> {
    sim.fabric().sent_log().iter().filter(|r| r.kind == kind).cloned().collect()
}

fn on_line(sim: &Simulation, kind: MsgKind, line: u64) -> Vec<SentRecord> {
    sim.fabric().sent_log().iter().filter(|r| r.kind == kind && r.line == Some(line)).cloned().collect()
}

const A: u64 = SHARED_DATA_BASE;
const B: u64 = SHARED_DATA_BASE + 0x1000;
const C: u64 = SHARED_DATA_BASE + 0x2000;

#[test]
fn empty_trace_finishes_at_time_zero() {
    let cfg = tiny_cfg(Protocol::Proactive, 4, 2);
    let mut sim = Simulation::new(cfg, Trace::empty(8), SimOptions::default()).unwrap();
    assert_eq!(sim.run().unwrap(), SimTime::ZERO);
    assert_eq!(sim.fabric().counters().sent, 0);
}

#[test]
fn ten_compute_cycles_take_4167_ps() {
    let cfg = tiny_cfg(Protocol::Wb, 2, 1);
    let mut sim = Simulation::new(cfg, solo(2, vec![TraceOp::Compute { cycles: 10 }]), SimOptions::default()).unwrap();
    assert_eq!(sim.run().unwrap(), SimTime::from_ps(4167));
}

#[test]
fn repeated_runs_match_exactly() {
    let cfg = tiny_cfg(Protocol::Parallel, 4, 2);
    let w = dsm_core::WorkloadSpec::ycsb_like().with_ops(200);
    let a = dsm_core::run(&cfg, &w, 4, Vec::new()).unwrap();
    let b = dsm_core::run(&cfg, &w, 4, Vec::new()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn l1_hit_costs_five_cycles() {
    let cfg = tiny_cfg(Protocol::Wb, 2, 1);
    let x = LOCAL_BASE + 0x40;
    let remote = false;
    let ops = vec![TraceOp::Load { addr: x, remote }, TraceOp::Load { addr: x, remote }];
    let sim = logged(cfg.clone(), solo(2, ops));
    let core = &sim.compute_nodes()[0].cores[0].stats;
    let miss = cfg.core_cycles(cfg.llc.latency_cycles) + SimTime::from_ns(cfg.dram_ns);
    assert_eq!(cfg.l1.latency_cycles, 5);
    assert_eq!(core.load_latency_ps, miss.ps() + cfg.core_cycles(5).ps());
    assert_eq!(sim.fabric().counters().sent, 0);
}

#[test]
fn stores_prefetch_ownership_before_reaching_the_head() {
    for protocol in [Protocol::Wb, Protocol::Baseline, Protocol::Parallel, Protocol::Proactive] {
        let cfg = tiny_cfg(protocol, 4, 1);
        let sim = logged(cfg.clone(), solo(4, vec![st(A), st(B)]));
        let rdx_b = on_line(&sim, MsgKind::RdX, B);
        assert_eq!(rdx_b.len(), 1, "{protocol}");
        // B retires one cycle after A, while A still waits for its own ownership.
        assert_eq!(rdx_b[0].at, cfg.core_cycles(1), "{protocol}");
        let a_ack = &on_line(&sim, MsgKind::RdXAck, A)[0];
        assert!(rdx_b[0].at < a_ack.arrives.unwrap(), "{protocol}");
    }
}

#[test]
fn the_73rd_store_stalls_on_a_full_store_buffer() {
    let lines = |n: u64| (0..n).map(|i| st(SHARED_DATA_BASE + i * 64)).collect::<Vec<_>>();
    let cfg = tiny_cfg(Protocol::Wb, 2, 1);
    assert_eq!(cfg.sb_entries, 72);
    let sim = logged(cfg.clone(), solo(2, lines(72)));
    let s = &sim.compute_nodes()[0].cores[0].stats;
    assert_eq!((s.max_sb, s.sb_full_stall_ps), (72, 0));
    let sim = logged(cfg, solo(2, lines(73)));
    let s = &sim.compute_nodes()[0].cores[0].stats;
    assert_eq!(s.max_sb, 72);
    assert!(s.sb_full_stall_ps > 0);
    // The stall ends when the first ownership returns and the head commits.
    let first_ack = on_line(&sim, MsgKind::RdXAck, SHARED_DATA_BASE)[0].arrives.unwrap();
    assert!(s.sb_full_stall_ps <= first_ack.ps());
}

#[test]
fn write_through_stores_are_serialized() {
    let cfg = tiny_cfg(Protocol::Wt, 2, 1);
    let sim = logged(cfg.clone(), solo(2, vec![st(A), st(B)]));
    let stores = of_kind(&sim, MsgKind::WtStore);
    let acks = of_kind(&sim, MsgKind::WtAck);
    assert_eq!((stores.len(), acks.len()), (2, 2));
    assert!(stores[1].at >= acks[0].arrives.unwrap());
    // Each round trip includes the persistent-memory write.
    let service = acks[0].at - stores[0].arrives.unwrap();
    assert!(service >= SimTime::from_ns(cfg.pmem_ns), "{service:?}");
    assert!(of_kind(&sim, MsgKind::RdX).is_empty());
}

#[test]
fn local_stores_under_write_through_behave_like_write_back() {
    let ops: Vec<_> = (0..20).map(|i| TraceOp::Store { addr: LOCAL_BASE + i * 8, remote: false }).collect();
    let wt = logged(tiny_cfg(Protocol::Wt, 2, 1), solo(2, ops.clone()));
    let wb = logged(tiny_cfg(Protocol::Wb, 2, 1), solo(2, ops));
    assert_eq!(wt.fabric().counters().sent, 0);
    assert_eq!(wt.completed_at(), wb.completed_at());
}

#[test]
fn owned_line_store_needs_no_traffic() {
    let ops = vec![st(A), TraceOp::Compute { cycles: 5000 }, st(A + 8), ld(A)];
    let sim = logged(tiny_cfg(Protocol::Wb, 2, 1), solo(2, ops));
    assert_eq!(sim.fabric().counters().sent, 2);
    assert_eq!(on_line(&sim, MsgKind::RdX, A).len(), 1);
}

#[test]
fn exclusive_request_invalidates_both_sharers_first() {
    let cfg = tiny_cfg(Protocol::Wb, 6, 1);
    let bar = TraceOp::Barrier { sync_id: 0 };
    let mut cores = vec![vec![bar]; 6];
    cores[2] = vec![ld(C), bar];
    cores[5] = vec![ld(C), bar];
    cores[0] = vec![bar, st(C)];
    let sim = logged(cfg, Trace::new(cores));
    let invs = on_line(&sim, MsgKind::Inv, C);
    let mut targets: Vec<_> = invs.iter().map(|r| r.dst).collect();
    targets.sort();
    assert_eq!(targets, vec![Endpoint::Cn(2), Endpoint::Cn(5)]);
    let inv_acks = on_line(&sim, MsgKind::InvAck, C);
    assert_eq!(inv_acks.len(), 2);
    let grant = on_line(&sim, MsgKind::RdXAck, C);
    assert_eq!(grant.len(), 1);
    assert_eq!(grant[0].dst, Endpoint::Cn(0));
    assert!(inv_acks.iter().all(|a| a.arrives.unwrap() <= grant[0].at));
    let mn = dsm_core::addr::home_mn(C, 2);
    assert_eq!(sim.memory_nodes()[mn].state(C), dsm_core::directory::DirState::Owned(0));
}

#[test]
fn read_of_uncached_line_gets_one_response() {
    let sim = logged(tiny_cfg(Protocol::Wb, 2, 1), solo(2, vec![ld(C)]));
    assert_eq!(on_line(&sim, MsgKind::RdAck, C).len(), 1);
    assert_eq!(sim.fabric().counters().sent, 2);
}

#[test]
fn one_exclusive_round_trip_is_128_coherence_bytes() {
    let sim = logged(tiny_cfg(Protocol::Wb, 2, 1), solo(2, vec![st(C)]));
    let bw = &sim.fabric().bandwidth_report()[0];
    assert_eq!(bw.total.coherence_bytes, 64 + 128);
    assert_eq!(bw.total.replication_bytes, 0);
}
