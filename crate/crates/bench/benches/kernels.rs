use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use lbras_bench::qp_instance;
use lbras_core::{
    check_pair_vb, mg_equilibrium, run_closed_loop, solve, solve_qp, vector, BouncingBallParams,
    MooreGreitzerParams, SimConfig,
};

fn simulate(c: &mut Criterion) {
    let p = BouncingBallParams::default();
    let sys = p.system().unwrap();
    let x0 = vector(&p.x0);
    let cfg = SimConfig::default().with_horizon(20.0);
    c.bench_function("solve bouncing ball 20 s", |b| {
        b.iter(|| solve(black_box(&sys), black_box(&x0), &cfg).unwrap())
    });
}

fn qp(c: &mut Criterion) {
    let problems: Vec<_> = (0..64).map(qp_instance).collect();
    c.bench_function("solve_qp x64", |b| {
        b.iter(|| {
            for pr in &problems {
                black_box(solve_qp(black_box(pr)).unwrap());
            }
        })
    });
}

fn certificates(c: &mut Criterion) {
    let p = BouncingBallParams::default();
    let sys = p.system().unwrap();
    let cert = p.certificates();
    let spec = p.stab_spec();
    let grid = p.grid(21);
    let mut group = c.benchmark_group("certificates");
    group.sample_size(10);
    group.bench_function("check_pair_vb 21^3", |b| {
        b.iter(|| check_pair_vb(&sys, &cert, &spec, &grid).unwrap())
    });
    group.finish();
}

fn closed_loop(c: &mut Criterion) {
    let p = MooreGreitzerParams::default();
    let plant = p.plant().unwrap();
    let policy = p.policy().unwrap();
    let x0 = mg_equilibrium(p.gamma0, &p).unwrap();
    let u0 = vector(&[0.0, p.gamma0]);
    let cfg = SimConfig::default().with_horizon(20.0).with_step(1e-2);
    let mut group = c.benchmark_group("closed loop");
    group.sample_size(10);
    group.bench_function("compressor 20 s", |b| {
        b.iter(|| run_closed_loop(&plant, policy.clone(), &p.sample_hold(), &x0, &u0, &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, simulate, qp, certificates, closed_loop);
criterion_main!(benches);
