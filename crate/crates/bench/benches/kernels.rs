use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use polytherm_core::constitutive::EnergyModel;
use polytherm_core::grid::gradient;
use polytherm_core::varstep::{constraint_adjoint, constraint_linear};
use polytherm_core::{GridSpec, InitialData, PaperEnergy, ScalarField, StepConfig};

fn wave(n: usize) -> polytherm_core::State {
    InitialData::default()
        .build(GridSpec::unit_cube(n).unwrap())
        .unwrap()
}

fn operators(c: &mut Criterion) {
    let mut g = c.benchmark_group("operators");
    for n in [16, 32] {
        let s = wave(n);
        let f0 = s.f();
        let xi = s.xi.clone();
        g.bench_with_input(BenchmarkId::new("gradient", n), &s.v, |b, v| {
            b.iter(|| gradient(black_box(v)))
        });
        g.bench_with_input(BenchmarkId::new("constraint_linear", n), &s.v, |b, v| {
            b.iter(|| constraint_linear(&f0, black_box(v)))
        });
        g.bench_with_input(BenchmarkId::new("constraint_adjoint", n), &xi, |b, m| {
            b.iter(|| constraint_adjoint(&f0, black_box(m)))
        });
    }
    g.finish();
}

fn pointwise(c: &mut Criterion) {
    let model = PaperEnergy::default();
    let s = wave(16);
    let n = s.grid().num_points();
    let dxi = s.xi.at(1);
    c.bench_function("hess_vec/16^3 points", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for p in 0..n {
                let (h, _) = model
                    .hess_vec(&s.xi.at(p), s.eta.at(p)[0], black_box(&dxi), 0.0)
                    .unwrap();
                acc += h[0];
            }
            acc
        })
    });
}

fn step(c: &mut Criterion) {
    let model = PaperEnergy::default();
    let mut g = c.benchmark_group("solve_step");
    g.sample_size(10);
    for n in [8, 16] {
        let s = wave(n);
        let r = ScalarField::zeros(*s.grid());
        let cfg = StepConfig::with_h(1e-3);
        g.bench_with_input(BenchmarkId::from_parameter(n), &s, |b, s| {
            b.iter(|| polytherm_core::solve_step(s, &r, &cfg, &model).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, operators, pointwise, step);
criterion_main!(benches);
