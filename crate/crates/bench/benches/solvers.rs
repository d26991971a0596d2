use criterion::{black_box, criterion_group, criterion_main, Criterion};
use selfdual::problems::{
    build_coupled_system_1d, build_heat_1d, build_nse2d_stationary, build_transport_1d, CoupledParams, HeatParams,
    Nse2dParams, TransportParams,
};
use selfdual::{MinimizeOptions, PathOptions};

fn stationary(c: &mut Criterion) {
    let transport = build_transport_1d(&TransportParams::default()).unwrap();
    let coupled = build_coupled_system_1d(&CoupledParams::default()).unwrap();
    let nse = build_nse2d_stationary(&Nse2dParams {
        n: 16,
        ..Nse2dParams::default()
    })
    .unwrap();
    let opts = MinimizeOptions::default();
    let mut g = c.benchmark_group("minimize");
    g.sample_size(10);
    g.bench_function("transport_1d", |b| {
        b.iter(|| transport.problem.solve_minimize(&opts).unwrap())
    });
    g.bench_function("coupled_1d", |b| {
        b.iter(|| coupled.problem.solve_minimize(&opts).unwrap())
    });
    g.bench_function("nse2d_16", |b| b.iter(|| nse.problem.solve_minimize(&opts).unwrap()));
    g.finish();

    let x = nse.problem.space().zeros();
    c.bench_function("certificate/nse2d_16", |b| {
        b.iter(|| nse.problem.certificate_grad(black_box(&x)).unwrap())
    });
}

fn evolution(c: &mut Criterion) {
    let heat = build_heat_1d(&HeatParams::default()).unwrap();
    let mut g = c.benchmark_group("heat_1d");
    g.sample_size(10);
    g.bench_function("path_minimize", |b| {
        b.iter(|| heat.problem.solve_path_minimize(&PathOptions::default()).unwrap())
    });
    g.bench_function("marching", |b| b.iter(|| heat.problem.solve_marching_prox().unwrap()));
    g.finish();
}

criterion_group!(benches, stationary, evolution);
criterion_main!(benches);
