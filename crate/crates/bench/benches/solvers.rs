use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use twoscale::limit::{assemble_limit_system, build_two_scale_space, solve_limit, CellBlocks};
use twoscale::{
    build_periodic_mesh, compute_kernel_basis, preset_geometry, CellSolver, FineSolver,
    InnerProductChoice, MacroMesh,
};
use twoscale_bench::{double_porosity, double_porosity_config};

fn kernel(c: &mut Criterion) {
    let mut group = c.benchmark_group("kernel");
    group.sample_size(10);
    for cells in [8, 16, 32] {
        let mesh = build_periodic_mesh(2, cells, 1).unwrap();
        let a = preset_geometry(&double_porosity(), 2, 1, cells).unwrap();
        group.bench_function(format!("double_porosity_{cells}"), |b| {
            b.iter(|| {
                compute_kernel_basis(&mesh, &a, InnerProductChoice::MeanGradient, 1e-8, 1e4)
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn correctors(c: &mut Criterion) {
    let mut group = c.benchmark_group("correctors");
    group.sample_size(10);
    for cells in [8, 16] {
        let mesh = build_periodic_mesh(2, cells, 1).unwrap();
        let a = preset_geometry(&double_porosity(), 2, 1, cells).unwrap();
        let basis =
            compute_kernel_basis(&mesh, &a, InnerProductChoice::MeanGradient, 1e-8, 1e4).unwrap();
        let solver = CellSolver::new(&mesh, &a, &basis).unwrap();
        group.bench_function(format!("bank_{cells}"), |b| {
            b.iter(|| solver.build_bank("bench").unwrap())
        });
    }
    group.finish();
}

fn limit(c: &mut Criterion) {
    let cfg = double_porosity_config(8, 32);
    let mesh = build_periodic_mesh(2, 8, 1).unwrap();
    let a = cfg.tensor().unwrap();
    let rho = cfg.density();
    let basis =
        compute_kernel_basis(&mesh, &a, InnerProductChoice::MeanGradient, 1e-8, 1e4).unwrap();
    let solver = CellSolver::new(&mesh, &a, &basis).unwrap();
    let fluxes = solver
        .elementary_fluxes(&solver.build_bank("bench").unwrap())
        .unwrap();
    let blocks = CellBlocks::new(&mesh, &a, &rho, &basis, &cfg.forcing).unwrap();
    let space = build_two_scale_space(MacroMesh::new(2, 32, 1.0).unwrap(), &basis);
    let mut group = c.benchmark_group("limit");
    group.sample_size(10);
    group.bench_function("assemble_32", |b| {
        b.iter(|| assemble_limit_system(space, &fluxes, &blocks, 1.0, &cfg.forcing).unwrap())
    });
    let system = assemble_limit_system(space, &fluxes, &blocks, 1.0, &cfg.forcing).unwrap();
    group.bench_function("solve_32", |b| {
        b.iter(|| solve_limit(black_box(&system), 1e-10).unwrap())
    });
    group.finish();
}

fn fine(c: &mut Criterion) {
    let solver = FineSolver::new(&double_porosity_config(8, 32)).unwrap();
    let mut group = c.benchmark_group("fine");
    group.sample_size(10);
    for eps in [0.125, 0.0625] {
        group.bench_function(format!("double_porosity_eps_{eps}"), |b| {
            b.iter(|| solver.solve(black_box(eps)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, kernel, correctors, limit, fine);
criterion_main!(benches);
