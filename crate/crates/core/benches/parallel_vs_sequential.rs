use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;
use smoothquant::compressors::Compressor;
use smoothquant::encoding::LevelCoding;
use smoothquant::methods::{gather, setup, worker_message, CompressorSpec, Geometry, MethodKind, StepContext};
use smoothquant::par;
use smoothquant::problems::{logistic_problems, synthetic_logistic_dataset, Regularizer};
use smoothquant::rng::{stream_rng, RngStreams};

fn monte_carlo(c: &mut Criterion) {
    let d = 64;
    let x: Vec<f64> = (0..d).map(|j| ((j * 7919) % 13) as f64 - 6.0).collect();
    let comp = Compressor::varying((0..d).map(|j| 0.05 + 0.01 * j as f64).collect()).unwrap();
    let draws = 4096;
    let mut group = c.benchmark_group("monte_carlo_compress");
    group.bench_function("parallel", |b| {
        b.iter(|| {
            let out = par::map_range(draws, |t| comp.apply(&x, &mut stream_rng(1, 0, t as u64)).unwrap()[0]);
            black_box(out.iter().sum::<f64>())
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            let out: Vec<f64> = (0..draws).map(|t| comp.apply(&x, &mut stream_rng(1, 0, t as u64)).unwrap()[0]).collect();
            black_box(out.iter().sum::<f64>())
        })
    });
    group.finish();
}

fn worker_round(c: &mut Criterion) {
    let mut group = c.benchmark_group("worker_round");
    for &n in &[4usize, 16] {
        let data = synthetic_logistic_dataset(200 * n, 40, 3).unwrap();
        let problems = logistic_problems(&data, n, 1e-3).unwrap();
        let s = setup(MethodKind::DcgdPlus, &problems, &CompressorSpec::varying(8.0), Geometry::Full).unwrap();
        let x = DVector::from_element(40, 0.1);
        let ctx = StepContext { streams: RngStreams::new(0), iteration: 0, coding: LevelCoding::Unary, reg: Regularizer::None };
        group.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, _| {
            b.iter(|| black_box(gather(&s.nodes, &x, None, &ctx).unwrap().len()))
        });
        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, _| {
            b.iter(|| {
                let msgs: Vec<_> = (0..n)
                    .map(|i| worker_message(&s.nodes[i], i, x.as_slice(), None, &ctx).unwrap())
                    .collect();
                black_box(msgs.len())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, monte_carlo, worker_round);
criterion_main!(benches);
