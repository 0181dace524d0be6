use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdis_bench::{training_set, unit_directions};
use sdis_core::kriging::{find_roots, DirectionSeed, RootFinderOptions};
use sdis_core::specfun::ChiDist;
use sdis_core::{benchmark_by_name, run_sus, run_with_seed, KrigingModel, SdisParams, SearchInterval, SusParams};

fn chi(c: &mut Criterion) {
    let chi = ChiDist::new(1000).unwrap();
    c.bench_function("chi_quantile_upper_n1000", |b| {
        b.iter(|| chi.quantile_upper(std::hint::black_box(1e-10)).unwrap())
    });
    c.bench_function("chi_interval_mass_n1000", |b| b.iter(|| chi.ln_interval_mass(std::hint::black_box(31.0), 40.0)));
}

fn kriging(c: &mut Criterion) {
    let (x, y) = training_set(12);
    c.bench_function("kriging_fit_12", |b| b.iter(|| KrigingModel::fit(&x, &y).unwrap()));
    let model = KrigingModel::fit(&x, &y).unwrap();
    c.bench_function("kriging_predict", |b| b.iter(|| model.predict(std::hint::black_box(3.3))));

    let case = benchmark_by_name("polynomial-2d", None).unwrap();
    let ls = case.limit_state();
    let interval = SearchInterval::chi_bounds(2, 1e-10).unwrap();
    let dirs = unit_directions(2, 16, 7);
    let origin = ls.eval(&[0.0, 0.0]);
    let opts = RootFinderOptions::default();
    c.bench_function("find_roots_polynomial_16_dirs", |b| {
        b.iter(|| {
            for a in &dirs {
                let seed = DirectionSeed { r2: 3.0, g2: None, init_k: 3 };
                find_roots(&ls, 1.0, a, &interval, seed, origin, &opts).unwrap();
            }
        })
    });
}

fn estimators(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimators");
    group.sample_size(10);
    let case = benchmark_by_name("linear", Some(10)).unwrap();
    let params = SdisParams::default();
    group.bench_function("sdis_linear_n10", |b| {
        b.iter_batched(|| case.limit_state(), |ls| run_with_seed(&ls, &params, 1).unwrap(), BatchSize::SmallInput)
    });
    let sus = SusParams::default();
    group.bench_function("sus_linear_n10", |b| {
        b.iter_batched(
            || (case.limit_state(), ChaCha8Rng::seed_from_u64(1)),
            |(ls, mut rng)| run_sus(&ls, 1.0, &sus, &mut rng, None).unwrap(),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, chi, kriging, estimators);
criterion_main!(benches);
