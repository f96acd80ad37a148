//! Sequential vs data-parallel sweeps. With `--no-default-features` both arms run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use mtlab::par::{map_par, map_seq};
use mtlab::radial::{bubble_energy, solve_w1};
use mtlab::testfn::{Barycenter, CoreRadius, TestFunction};
use mtlab::torus::TorusField;

type Mapper = fn(&[f64], &(dyn Fn(&f64) -> f64 + Sync)) -> Vec<f64>;

fn seq(items: &[f64], f: &(dyn Fn(&f64) -> f64 + Sync)) -> Vec<f64> {
    map_seq(items, |x| f(x))
}

fn par(items: &[f64], f: &(dyn Fn(&f64) -> f64 + Sync)) -> Vec<f64> {
    map_par(items, |x| f(x))
}

const ARMS: [(&str, Mapper); 2] = [("seq", seq), ("par", par)];

fn energy_sweep(c: &mut Criterion) {
    let gammas: Vec<f64> = (0..16).map(|i| 6.0 + 0.5 * i as f64).collect();
    let mut g = c.benchmark_group("bubble_energy_gamma_sweep");
    g.sample_size(10);
    for (name, run) in ARMS {
        g.bench_function(BenchmarkId::new(name, gammas.len()), |b| {
            b.iter(|| run(black_box(&gammas), &|&x| bubble_energy(x, 1.5, 1.0).unwrap().product))
        });
    }
    g.finish();
}

fn w1_sweep(c: &mut Criterion) {
    let ps: Vec<f64> = (0..8).map(|i| 1.1 + 0.1 * i as f64).collect();
    let mut g = c.benchmark_group("w1_p_sweep");
    g.sample_size(10);
    for (name, run) in ARMS {
        g.bench_function(BenchmarkId::new(name, ps.len()), |b| {
            b.iter(|| run(black_box(&ps), &|&p| solve_w1(p, 1e4).unwrap().integral_laplacian))
        });
    }
    g.finish();
}

fn cell_density_ensemble(c: &mut Criterion) {
    let grid = TorusField::constant(128, 1.0, 0.0, 1.0).unwrap();
    let shifts: Vec<f64> = (0..8).map(|i| i as f64 / 8.0).collect();
    let mut g = c.benchmark_group("cell_density_sigma_ensemble");
    g.sample_size(10);
    for (name, run) in ARMS {
        g.bench_function(BenchmarkId::new(name, shifts.len()), |b| {
            b.iter(|| {
                run(black_box(&shifts), &|&s| {
                    let sigma = Barycenter::new(vec![[0.2 + 0.1 * s, 0.3], [0.7, 0.7 - 0.1 * s]], vec![0.5, 0.5], 1.0).unwrap();
                    let tf = TestFunction::new(sigma, 8.0, 1.5, CoreRadius::Consistent).unwrap();
                    tf.cell_density(&grid).unwrap().max()
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, energy_sweep, w1_sweep, cell_density_ensemble);
criterion_main!(benches);
