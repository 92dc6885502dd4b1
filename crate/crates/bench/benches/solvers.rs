use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::{s, Axis};
use noicca::cca::closed_form;
use noicca::dcca::{stol_gradient, NoiState};
use noicca::linalg::{inv_sqrt_sym, sym_eig};
use noicca::{DccaModel, OptimConfig, Ridge};
use noicca_bench::{covariance, synth_views, train_split};

fn linalg(c: &mut Criterion) {
    let cov = covariance(50, 2000);
    c.bench_function("sym_eig 50x50", |b| b.iter(|| sym_eig(black_box(cov.view())).unwrap()));
    c.bench_function("inv_sqrt_sym 50x50", |b| {
        b.iter(|| inv_sqrt_sym(black_box(cov.view()), 1e-6).unwrap())
    });
}

fn cca(c: &mut Criterion) {
    let (x, y) = synth_views(50, 40, 10, 2000);
    c.bench_function("closed_form 50/40 L=10 N=2000", |b| {
        b.iter(|| closed_form(black_box(x.view()), black_box(y.view()), 10, Ridge::default()).unwrap())
    });
}

fn training_steps(c: &mut Criterion) {
    let data = train_split(50, 40, 10, 2000);
    let model = DccaModel::init(&[50, 64, 10], &[40, 64, 10], 3).unwrap();
    let cfg = OptimConfig {
        minibatch_size: 100,
        ..OptimConfig::default()
    };
    let xb = data.train_x.slice(s![.., ..100]).to_owned();
    let yb = data.train_y.slice(s![.., ..100]).to_owned();

    c.bench_function("NOI step n=100", |b| {
        let mut m = model.clone();
        let mut state = NoiState::new(&m, xb.view(), yb.view(), data.n_train(), &cfg).unwrap();
        b.iter(|| state.step(&mut m, xb.view(), yb.view(), &cfg).unwrap())
    });

    let (f, g) = model.project(xb.view(), yb.view()).unwrap();
    c.bench_function("STOL gradient n=100", |b| {
        b.iter(|| stol_gradient(black_box(f.view()), black_box(g.view()), 10, Ridge::default()).unwrap())
    });

    let x1 = data.train_x.select(Axis(1), &[0]);
    let y1 = data.train_y.select(Axis(1), &[0]);
    c.bench_function("NOI step n=1", |b| {
        let mut m = model.clone();
        let mut state = NoiState::new(&m, xb.view(), yb.view(), data.n_train(), &cfg).unwrap();
        b.iter(|| state.step(&mut m, x1.view(), y1.view(), &cfg).unwrap())
    });
}

criterion_group!(benches, linalg, cca, training_steps);
criterion_main!(benches);
