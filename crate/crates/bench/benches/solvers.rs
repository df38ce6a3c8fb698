use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use trihom_bench::{disk_cell, sphere_cell};
use trihom_core::tensors::{extracellular_tensor, micro_tensor};
use trihom_core::{assemble, isotropic, ConductivityField, Label, SolveOptions};

fn assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("assemble");
    for n in [32, 64, 128] {
        let geom = disk_cell(n);
        let field = ConductivityField::on_label(&geom, Label::Extra, isotropic(2, 1.0)).unwrap();
        group.bench_with_input(BenchmarkId::new("disk", n), &n, |b, _| {
            b.iter(|| assemble(black_box(&geom), &field, 0, false).unwrap())
        });
    }
    group.finish();
}

fn cell_tensor_2d(c: &mut Criterion) {
    let mut group = c.benchmark_group("extra_tensor_2d");
    group.sample_size(10);
    let opts = SolveOptions::default();
    for n in [32, 64, 128] {
        let geom = disk_cell(n);
        group.bench_with_input(BenchmarkId::new("disk", n), &n, |b, _| {
            b.iter(|| extracellular_tensor(black_box(&geom), &isotropic(2, 1.0), &opts).unwrap())
        });
    }
    group.finish();
}

fn cell_tensor_3d(c: &mut Criterion) {
    let mut group = c.benchmark_group("micro_tensor_3d");
    group.sample_size(10);
    let opts = SolveOptions::default();
    for n in [16, 24] {
        let geom = sphere_cell(n);
        group.bench_with_input(BenchmarkId::new("sphere", n), &n, |b, _| {
            b.iter(|| micro_tensor(black_box(&geom), &isotropic(3, 1.0), &opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, assembly, cell_tensor_2d, cell_tensor_3d);
criterion_main!(benches);
