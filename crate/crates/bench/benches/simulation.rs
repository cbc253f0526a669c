use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dsm_core::engine::{ComponentId, EventQueue};
use dsm_core::{generate_trace, run_trace, ClusterConfig, Protocol, SimTime, WorkloadSpec};

fn protocols(c: &mut Criterion) {
    let cfg = ClusterConfig { num_cns: 8, num_mns: 2, ..ClusterConfig::default() };
    let w = WorkloadSpec::write_heavy().with_ops(300);
    let trace = Arc::new(generate_trace(&w, cfg.total_cores(), 1).unwrap());
    let mut g = c.benchmark_group("write-heavy");
    g.sample_size(10);
    for p in Protocol::ALL {
        let cfg = ClusterConfig { protocol: p, ..cfg.clone() };
        g.bench_with_input(BenchmarkId::from_parameter(p), &cfg, |b, cfg| {
            b.iter(|| run_trace(cfg, trace.clone(), &w.name, 1, Vec::new()).unwrap().completion_ps)
        });
    }
    g.finish();
}

fn crash_recovery(c: &mut Criterion) {
    let cfg = ClusterConfig { num_cns: 8, num_mns: 2, protocol: Protocol::Proactive, ..ClusterConfig::default() };
    let w = WorkloadSpec::ycsb_like().with_ops(300);
    let trace = Arc::new(generate_trace(&w, cfg.total_cores(), 1).unwrap());
    let crash: dsm_core::CrashPlan = "cn=2,t=10us".parse().unwrap();
    let mut g = c.benchmark_group("recovery");
    g.sample_size(10);
    g.bench_function("single-victim", |b| {
        b.iter(|| run_trace(&cfg, trace.clone(), &w.name, 1, vec![crash.clone()]).unwrap().recoveries.len())
    });
    g.finish();
}

fn event_queue(c: &mut Criterion) {
    c.bench_function("event-queue/100k", |b| {
        b.iter(|| {
            let mut q: EventQueue<u64> = EventQueue::new();
            let mut x = 0x9e37_79b9_u64;
            for i in 0..100_000u64 {
                x ^= x << 13;
                x ^= x >> 7;
                x ^= x << 17;
                q.schedule(SimTime::from_ps(x % 1_000_000), ComponentId::Harness, i).unwrap();
            }
            let mut sum = 0;
            while let Some(e) = q.pop() {
                sum += black_box(e.payload);
            }
            sum
        })
    });
}

criterion_group!(benches, protocols, crash_recovery, event_queue);
criterion_main!(benches);
