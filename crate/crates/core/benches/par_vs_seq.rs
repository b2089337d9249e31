//! Parallel vs sequential throughput on the three inner loops that
//! dominate learning runs: measure scans, prediction-error counts, and
//! character sums. The `_seq` variants are always compiled, so one build
//! measures both sides; `dense_transform` tracks the axis-pass transform
//! on whichever execution path the feature set selects.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64;

use rectsieve::concepts::{Concept, ConceptKind, Gate, GateKind, Literal};
use rectsieve::domain::Domain;
use rectsieve::exec;
use rectsieve::fourier::{dft_signs, unit_phase};

fn measure_scan(c: &mut Criterion) {
    let mut group = c.benchmark_group("measure_scan");
    for &len in &[1usize << 16, 1 << 20] {
        let margins: Vec<f64> = (0..len).map(|i| ((i as f64) * 0.37).sin() * 3.0).collect();
        let weigh = |m: f64| {
            if m <= 0.0 {
                1.0
            } else {
                (1.0 + 0.05f64).powf(-m)
            }
        };
        group.bench_with_input(BenchmarkId::new("parallel", len), &len, |bch, _| {
            bch.iter(|| exec::sum_indexed(len, |i| weigh(margins[i])))
        });
        group.bench_with_input(BenchmarkId::new("sequential", len), &len, |bch, _| {
            bch.iter(|| exec::sum_indexed_seq(len, |i| weigh(margins[i])))
        });
    }
    group.finish();
}

fn prediction_error(c: &mut Criterion) {
    let b = 256u64;
    let concept = Concept {
        n: 2,
        b,
        kind: ConceptKind::UnionRect,
        gates: vec![
            Gate {
                kind: GateKind::Rectangle,
                literals: vec![
                    Literal { var: 0, sign: -1, lo: 30, hi: 170, z: 1 },
                    Literal { var: 1, sign: -1, lo: 90, hi: 220, z: 1 },
                ],
            },
            Gate {
                kind: GateKind::Rectangle,
                literals: vec![Literal { var: 0, sign: -1, lo: 200, hi: 250, z: 1 }],
            },
        ],
        disjoint: false,
    };
    concept.validate().unwrap();
    let domain = concept.domain();
    let len = domain.dense_size(1 << 20).unwrap();
    let mut group = c.benchmark_group("prediction_error");
    group.bench_function("parallel", |bch| {
        bch.iter(|| {
            exec::count_indexed(len, |i| {
                let x = domain.point_vec(i);
                concept.eval(&x) != if x[0] > x[1] { 1 } else { -1 }
            })
        })
    });
    group.bench_function("sequential", |bch| {
        bch.iter(|| {
            exec::count_indexed_seq(len, |i| {
                let x = domain.point_vec(i);
                concept.eval(&x) != if x[0] > x[1] { 1 } else { -1 }
            })
        })
    });
    group.finish();
}

fn character_sum(c: &mut Criterion) {
    let b = 1u64 << 16;
    let len = b as usize;
    let values: Vec<f64> = (0..len).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
    let alpha = 12345u64;
    let mut group = c.benchmark_group("character_sum");
    group.bench_function("parallel", |bch| {
        bch.iter(|| {
            exec::fold_indexed(len, Complex64::new(0.0, 0.0), |i| {
                values[i] * unit_phase(alpha * i as u64 % b, b).conj()
            })
        })
    });
    group.bench_function("sequential", |bch| {
        bch.iter(|| {
            exec::fold_indexed_seq(len, Complex64::new(0.0, 0.0), |i| {
                values[i] * unit_phase(alpha * i as u64 % b, b).conj()
            })
        })
    });
    group.finish();
}

fn dense_transform(c: &mut Criterion) {
    let mut group = c.benchmark_group("dense_transform");
    group.sample_size(10);
    for (n, b) in [(1usize, 4096u64), (2, 64)] {
        let domain = Domain::new(n, b).unwrap();
        let len = domain.dense_size(1 << 20).unwrap();
        let signs: Vec<i8> = (0..len).map(|i| if i % 5 < 2 { 1 } else { -1 }).collect();
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("b{b}_n{n}")),
            &(),
            |bch, _| bch.iter(|| dft_signs(domain, &signs, 1 << 20).unwrap()),
        );
    }
    group.finish();
}

criterion_group!(
    benches,
    measure_scan,
    prediction_error,
    character_sum,
    dense_transform
);
criterion_main!(benches);
