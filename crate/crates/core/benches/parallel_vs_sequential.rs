//! Rayon fan-out against the sequential fallback on the two batch workloads:
//! a basepoint scan (one kernel solve each) and a μ table over τ.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ricci_lab::battery::trig_field;
use ricci_lab::entropy::{MuOptions, MuTable};
use ricci_lab::flow::{evolve_conformal_torus, ConformalFlowOptions, FlowHistory};
use ricci_lab::geometry::GridMesh;
use ricci_lab::par;
use ricci_lab::regularity::{eps_regularity_scan, ScanOptions};

fn flow(res: usize) -> FlowHistory {
    let mesh = GridMesh::new(2, res, std::f64::consts::TAU).unwrap();
    let u0: Vec<f64> = trig_field(&mesh, 3, 1).iter().map(|v| 0.3 * v).collect();
    evolve_conformal_torus(&mesh, &u0, 0.2, &ConformalFlowOptions::default()).unwrap()
}

fn modes() -> [(&'static str, bool); 2] {
    [("parallel", true), ("sequential", false)]
}

fn scan(c: &mut Criterion) {
    let f = flow(32);
    let opts = ScanOptions {
        stride: 8,
        mu_points: 3,
        ..Default::default()
    };
    let mut g = c.benchmark_group("eps-scan-32");
    g.sample_size(10);
    for (name, on) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::set_parallel(on);
            b.iter(|| black_box(eps_regularity_scan(&f, -0.15, &opts).unwrap()))
        });
    }
    g.finish();
    par::set_parallel(true);
}

fn mu_table(c: &mut Criterion) {
    let f = flow(32);
    let geom = f.geom(0);
    let opts = MuOptions {
        max_iterations: 400,
        ..Default::default()
    };
    let mut g = c.benchmark_group("mu-table-32");
    g.sample_size(10);
    for (name, on) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::set_parallel(on);
            b.iter(|| black_box(MuTable::geometric(&geom, 0.01, 0.4, 8, &opts).unwrap()))
        });
    }
    g.finish();
    par::set_parallel(true);
}

criterion_group!(benches, scan, mu_table);
criterion_main!(benches);
