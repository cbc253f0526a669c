use std::collections::HashMap;

use dsm_core::addr::{barrier_line, line_of, lock_line};
use dsm_core::workload::PRESETS;
use dsm_core::{generate_trace, Trace, TraceOp, WorkloadSpec};

type Vc = Vec<u64>;

fn join(a: &mut Vc, b: &Vc) {
    for (x, y) in a.iter_mut().zip(b) {
        *x = (*x).max(*y);
    }
}

#[derive(Default)]
struct Shadow {
    write: Option<(usize, u64)>,
    reads: HashMap<usize, u64>,
}

/// Happens-before race detector over one legal interleaving of `trace`.
///
/// Cores advance round-robin one op at a time; lock acquires wait for the
/// holder, barriers wait for every core. Returns the first race found.
fn find_race(trace: &Trace) -> Option<String> {
    let n = trace.num_cores();
    let mut vc: Vec<Vc> = (0..n)
        .map(|i| {
            let mut v = vec![0; n];
            v[i] = 1;
            v
        })
        .collect();
    let mut pc = vec![0usize; n];
    let mut held: HashMap<u32, usize> = HashMap::new();
    let mut lock_vc: HashMap<u32, Vc> = HashMap::new();
    let mut at_barrier: Vec<Option<u32>> = vec![None; n];
    let mut shadow: HashMap<u64, Shadow> = HashMap::new();
    loop {
        let mut progressed = false;
        for t in 0..n {
            let Some(&op) = trace.cores[t].get(pc[t]) else { continue };
            match op {
                TraceOp::Compute { .. } => {}
                TraceOp::Load { addr, .. } => {
                    let s = shadow.entry(addr).or_default();
                    if let Some((w, c)) = s.write {
                        if w != t && c > vc[t][w] {
                            return Some(format!("write by core {w} races load by core {t} at {addr:#x}"));
                        }
                    }
                    s.reads.insert(t, vc[t][t]);
                }
                TraceOp::Store { addr, .. } => {
                    let s = shadow.entry(addr).or_default();
                    if let Some((w, c)) = s.write {
                        if w != t && c > vc[t][w] {
                            return Some(format!("write by core {w} races store by core {t} at {addr:#x}"));
                        }
                    }
                    for (&r, &c) in &s.reads {
                        if r != t && c > vc[t][r] {
                            return Some(format!("load by core {r} races store by core {t} at {addr:#x}"));
                        }
                    }
                    s.reads.clear();
                    s.write = Some((t, vc[t][t]));
                }
                TraceOp::LockAcq { sync_id } => {
                    if held.contains_key(&sync_id) {
                        continue;
                    }
                    held.insert(sync_id, t);
                    if let Some(l) = lock_vc.get(&sync_id) {
                        let l = l.clone();
                        join(&mut vc[t], &l);
                    }
                }
                TraceOp::LockRel { sync_id } => {
                    assert_eq!(held.remove(&sync_id), Some(t), "core {t} releases a lock it does not hold");
                    lock_vc.insert(sync_id, vc[t].clone());
                    vc[t][t] += 1;
                }
                TraceOp::Barrier { sync_id } => {
                    at_barrier[t] = Some(sync_id);
                    let waiting = (0..n).filter(|&c| at_barrier[c].is_some()).count();
                    if waiting < n {
                        continue;
                    }
                    assert!(at_barrier.iter().all(|b| *b == Some(sync_id)), "barrier ids disagree");
                    let mut all = vec![0; n];
                    for v in &vc {
                        join(&mut all, v);
                    }
                    for c in 0..n {
                        vc[c] = all.clone();
                        vc[c][c] += 1;
                        at_barrier[c] = None;
                        pc[c] += 1;
                    }
                    progressed = true;
                    continue;
                }
            }
            pc[t] += 1;
            progressed = true;
        }
        if !progressed {
            let done = (0..n).all(|t| pc[t] >= trace.cores[t].len());
            assert!(done, "interleaving deadlocked at {pc:?}");
            return None;
        }
    }
}

#[test]
fn detector_catches_unordered_writes() {
    let x = dsm_core::addr::SHARED_DATA_BASE;
    let racy = Trace::new(vec![
        vec![TraceOp::Store { addr: x, remote: true }],
        vec![TraceOp::Store { addr: x, remote: true }],
    ]);
    assert!(find_race(&racy).is_some());
    let bar = TraceOp::Barrier { sync_id: 0 };
    let fenced = Trace::new(vec![
        vec![TraceOp::Store { addr: x, remote: true }, bar],
        vec![bar, TraceOp::Load { addr: x, remote: true }],
    ]);
    assert_eq!(find_race(&fenced), None);
    let locked = |c: u32| {
        vec![TraceOp::LockAcq { sync_id: c }, TraceOp::Store { addr: x, remote: true }, TraceOp::LockRel { sync_id: c }]
    };
    assert_eq!(find_race(&Trace::new(vec![locked(1), locked(1)])), None);
    assert!(find_race(&Trace::new(vec![locked(1), locked(2)])).is_some());
}

#[test]
fn generated_traces_are_race_free() {
    for &name in PRESETS {
        for seed in 0..4 {
            let w = WorkloadSpec::preset(name).unwrap().with_ops(400);
            let trace = generate_trace(&w, 8, seed).unwrap();
            assert_eq!(find_race(&trace), None, "{name} seed {seed}");
        }
    }
}

#[test]
fn sync_ops_use_their_own_lines() {
    let trace = generate_trace(&WorkloadSpec::sparse_sync().with_ops(500), 4, 1).unwrap();
    let sync_lines: Vec<u64> = (0..64).flat_map(|i| [lock_line(i), barrier_line(i)]).collect();
    for ops in &trace.cores {
        for op in ops {
            if let TraceOp::Load { addr, .. } | TraceOp::Store { addr, .. } = *op {
                assert!(!sync_lines.contains(&line_of(addr)));
            }
        }
    }
}

#[test]
fn ycsb_mix_is_eighty_twenty() {
    let w = WorkloadSpec::ycsb_like().with_ops(100_000 / 4);
    let trace = generate_trace(&w, 4, 9).unwrap();
    let (mut loads, mut stores) = (0u64, 0u64);
    for op in trace.cores.iter().flatten() {
        match op {
            TraceOp::Load { .. } => loads += 1,
            TraceOp::Store { .. } => stores += 1,
            _ => {}
        }
    }
    let f = stores as f64 / (loads + stores) as f64;
    assert!((0.19..=0.21).contains(&f), "{f}");
}

#[test]
fn trace_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.trace");
    let trace = generate_trace(&WorkloadSpec::write_heavy().with_ops(300), 4, 3).unwrap();
    trace.write_to(&path).unwrap();
    assert_eq!(dsm_core::trace::load_trace(&path).unwrap(), trace);
}
