use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tdmh_core::harness::{comparison_config, replay_scenario, HexNetwork, MonteCarloSpec};
use tdmh_core::scheduler::{conflict_in_time, expand, schedule_streams, validate};
use tdmh_core::sim::{LogLevel, SimOptions, Simulation};
use tdmh_core::{Direction, NodeId, PeriodClass, StreamId, StreamParams};

fn streams(n: usize, nodes: u8) -> Vec<(StreamId, StreamParams)> {
    let p = StreamParams::new(PeriodClass::new(2).unwrap(), Direction::Forward, 1, false).unwrap();
    (0..n)
        .map(|i| {
            let src = (i * 7 % nodes as usize) as u8;
            let dst = ((i * 7 + 1 + i % 5) % nodes as usize) as u8;
            let dst = if dst == src { (dst + 1) % nodes } else { dst };
            (StreamId::new(src, dst, (i / nodes as usize) as u8), p)
        })
        .collect()
}

fn bench_time_predicate(c: &mut Criterion) {
    c.bench_function("conflict_in_time 200x200", |b| {
        b.iter(|| {
            let mut hits = 0u32;
            for p in 1..=200 {
                for q in (1..=200).step_by(7) {
                    hits += conflict_in_time(black_box(3) % p, p, black_box(5) % q, q) as u32;
                }
            }
            hits
        })
    });
}

fn bench_schedule(c: &mut Criterion) {
    let net = HexNetwork::hexagon(3);
    let g = net.graph(net.len());
    let cfg = comparison_config(net.len());
    let mut group = c.benchmark_group("schedule_streams");
    for n in [10, 40, 80] {
        let s = streams(n, net.len() as u8);
        group.bench_with_input(BenchmarkId::from_parameter(n), &s, |b, s| b.iter(|| schedule_streams(s, &g, &cfg, 1)));
    }
    group.finish();
    let out = schedule_streams(&streams(80, net.len() as u8), &g, &cfg, 1);
    c.bench_function("validate 80 streams", |b| b.iter(|| validate(black_box(&out.schedule), &g)));
    c.bench_function("expand 80 streams", |b| b.iter(|| expand(black_box(&out.schedule), NodeId(0))));
}

fn bench_admission(c: &mut Criterion) {
    let spec = MonteCarloSpec::comparison(2, 8, 1);
    c.bench_function("admission 8 trials d=2", |b| b.iter(|| tdmh_core::harness::tdmh_admission_mc(&spec)));
}

fn bench_sim(c: &mut Criterion) {
    let s = replay_scenario();
    let opts = SimOptions { log: LogLevel::Off, ..Default::default() };
    c.bench_function("simulate replay 10s", |b| {
        b.iter(|| {
            let mut sim = Simulation::with_options(&s, opts).unwrap();
            sim.run_until(Duration::from_secs(10)).unwrap();
            sim.schedules()
        })
    });
}

criterion_group!(benches, bench_time_predicate, bench_schedule, bench_admission, bench_sim);
criterion_main!(benches);
