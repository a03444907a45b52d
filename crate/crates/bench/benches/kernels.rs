use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use faer::Mat;
use opinf_core::opinf::{gram_accumulate, kron_comp_into, quadratic_width, MemoryBudget};
use opinf_core::spectral::{ks_initial_condition, KsSolver};
use opinf_core::{KsConfig, QuadraticModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn gram(c: &mut Criterion) {
    let mut g = c.benchmark_group("gram_accumulate");
    g.sample_size(10);
    for r in [10usize, 30] {
        let q = random(r, 4000, 1);
        let dq = random(r, 4000, 2);
        g.bench_with_input(BenchmarkId::from_parameter(r), &r, |b, _| {
            b.iter(|| gram_accumulate(&q, None, &dq, 1024, MemoryBudget::default()).unwrap())
        });
    }
    g.finish();
}

fn ks_step(c: &mut Criterion) {
    let cfg = KsConfig::default();
    let mut solver = KsSolver::new(&cfg, &ks_initial_condition(&cfg)).unwrap();
    c.bench_function("ks_etdrk4_step_512", |b| b.iter(|| solver.step().unwrap()));
}

fn quadratic_rhs(c: &mut Criterion) {
    let mut g = c.benchmark_group("quadratic_rhs");
    for r in [40usize, 160] {
        let w = quadratic_width(r);
        let model = QuadraticModel::new(
            vec![0.1; r],
            random(r, r, 3),
            random(r, w, 4),
            Mat::zeros(r, 0),
        )
        .unwrap();
        let q: Vec<f64> = random(r, 1, 5).col_as_slice(0).to_vec();
        let mut scratch = vec![0.0; w];
        let mut out = vec![0.0; r];
        g.bench_with_input(BenchmarkId::from_parameter(r), &r, |b, _| {
            b.iter(|| model.rhs_into(&q, None, &mut scratch, &mut out))
        });
    }
    g.finish();
}

fn kron(c: &mut Criterion) {
    let q: Vec<f64> = (0..160).map(|i| i as f64 * 0.01).collect();
    let mut out = vec![0.0; quadratic_width(160)];
    c.bench_function("kron_comp_160", |b| b.iter(|| kron_comp_into(&q, &mut out)));
}

criterion_group!(benches, gram, ks_step, quadratic_rhs, kron);
criterion_main!(benches);
