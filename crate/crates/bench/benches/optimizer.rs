use asymlift_bench::profile_grid;
use asymlift_core::{CorrectionTerms, Optimizer, QuadConfig, SolverConfig, Week};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

fn expected_cost(c: &mut Criterion) {
    let opt = Optimizer::default();
    let profiles = profile_grid();
    let corr = CorrectionTerms::default();
    c.bench_function("expected_cost", |b| {
        b.iter(|| {
            profiles
                .iter()
                .map(|p| opt.expected_cost(black_box(0.5 * p.sigma), p, &corr).unwrap())
                .sum::<f64>()
        })
    });
}

fn optimal_delta(c: &mut Criterion) {
    let profiles = profile_grid();
    let corr = CorrectionTerms::default();
    let week = Week::from_iso(2024, 1).unwrap();
    let mut group = c.benchmark_group("optimal_delta");
    for panels in [16usize, 64, 256] {
        let opt = Optimizer::new(SolverConfig { quad: QuadConfig { panels, ..QuadConfig::default() }, ..Default::default() });
        group.bench_with_input(BenchmarkId::from_parameter(panels), &opt, |b, opt| {
            b.iter(|| {
                for p in &profiles {
                    black_box(opt.optimal_delta(week, p, &corr).unwrap());
                }
            })
        });
    }
    group.finish();
}

criterion_group!(benches, expected_cost, optimal_delta);
criterion_main!(benches);
