use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fsu_demand::{
    cramer_two_sample, fit_la_aids, generate, gini_index, grid_search, item_expenditures,
    ks_two_sample, predict_shares, uniformize_prices, FitOptions, GridPreset, PriceStrategy,
    SyntheticConfig,
};
use std::hint::black_box;

fn dataset(n: usize) -> fsu_demand::DemandDataset {
    generate(&SyntheticConfig {
        n_households: n,
        n_fsus: n / 10,
        seed: 1,
        ..SyntheticConfig::default()
    })
    .expect("synthetic data")
    .0
}

fn bench_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit_la_aids");
    for n in [2_000, 20_000] {
        let data = dataset(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &data, |b, d| {
            b.iter(|| fit_la_aids(black_box(d), &FitOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn bench_uniformize(c: &mut Criterion) {
    let data = dataset(20_000);
    c.bench_function("uniformize_median_20000", |b| {
        b.iter(|| uniformize_prices(black_box(&data), PriceStrategy::Median))
    });
}

fn bench_gini(c: &mut Criterion) {
    let data = dataset(20_000);
    let x = item_expenditures(&data, "item1").unwrap();
    c.bench_function("gini_20000", |b| {
        b.iter(|| gini_index(black_box(&x)).unwrap())
    });
}

fn bench_tests(c: &mut Criterion) {
    let data = dataset(2_000);
    let params = fit_la_aids(&data, &FitOptions::default())
        .unwrap()
        .parameters;
    let a = predict_shares(&params, &data, None).unwrap();
    let uniform = uniformize_prices(&data, PriceStrategy::Median);
    let b_shares = predict_shares(&params, &uniform, None).unwrap();
    let col = |rows: &[Vec<f64>]| rows.iter().map(|r| r[0]).collect::<Vec<_>>();
    let (x, y) = (col(&a), col(&b_shares));
    c.bench_function("ks_2000x2000", |b| {
        b.iter(|| ks_two_sample(black_box(&x), black_box(&y), 0.05).unwrap())
    });
    let mut group = c.benchmark_group("cramer_200_permutations");
    group.sample_size(10);
    for n in [500, 2_000] {
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| cramer_two_sample(&a[..n], &b_shares[..n], 200, 7, 0.05).unwrap())
        });
    }
    group.finish();
}

fn bench_cv(c: &mut Criterion) {
    let data = dataset(2_000);
    let grid = GridPreset::ExpenditureOnly.specs();
    let mut group = c.benchmark_group("grid_search");
    group.sample_size(10);
    group.bench_function("expenditure_only_10_folds_2000", |b| {
        b.iter(|| grid_search(black_box(&data), &grid, 10, 1).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_fit,
    bench_uniformize,
    bench_gini,
    bench_tests,
    bench_cv
);
criterion_main!(benches);
