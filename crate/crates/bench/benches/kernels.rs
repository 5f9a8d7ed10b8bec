use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use morphforge::mesh::shapes::{ellipsoid, icosphere};
use morphforge::{
    cfc_filter, hd95, register_demons, voxelize, voxelize_on_grid, Cfc, DemonsParams, Grid, TimeSeries, Vec3,
    VoxelizeParams,
};

fn bench_voxelize(c: &mut Criterion) {
    let mesh = icosphere(Vec3::zeros(), 20.0, 4);
    let p = VoxelizeParams {
        spacing: [0.5; 3],
        padding: 2,
        seed: 0,
    };
    c.bench_function("voxelize icosphere 84^3", |b| {
        b.iter(|| voxelize(black_box(&mesh), &p).unwrap())
    });
}

fn small_pair() -> (morphforge::BinaryImage3D, morphforge::BinaryImage3D) {
    let g = Grid::new([48; 3], [1.0; 3], [0.0; 3]).unwrap();
    let c = Vec3::repeat(23.5);
    let a = voxelize_on_grid(&icosphere(c, 12.0, 3), &g, 0).unwrap();
    let b = voxelize_on_grid(&ellipsoid(c, Vec3::new(15.0, 12.0, 11.0), 3), &g, 0).unwrap();
    (a, b)
}

fn bench_demons(c: &mut Criterion) {
    let (a, b) = small_pair();
    let p = DemonsParams::for_spacing(1.0);
    let mut g = c.benchmark_group("registration");
    g.sample_size(10);
    g.bench_function("demons 48^3", |bn| {
        bn.iter(|| register_demons(black_box(&a), &b, &p).unwrap())
    });
    g.finish();
}

fn bench_hd95(c: &mut Criterion) {
    let (a, b) = small_pair();
    c.bench_function("hd95 48^3", |bn| bn.iter(|| hd95(black_box(&a), &b).unwrap()));
}

fn bench_cfc(c: &mut Criterion) {
    let s: Vec<f64> = (0..20_000).map(|i| (i as f64 * 0.01).sin()).collect();
    let ts = TimeSeries::new(0.0, 1e-4, s, "x").unwrap();
    c.bench_function("cfc60 20k samples", |b| {
        b.iter(|| cfc_filter(black_box(&ts), Cfc::Cfc60).unwrap())
    });
}

criterion_group!(benches, bench_voxelize, bench_demons, bench_hd95, bench_cfc);
criterion_main!(benches);
