//! Sequential vs rayon execution of the per-sample hot paths. Both modes
//! produce identical results; only wall time differs.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use monoiqa::diffcore::Matrix;
use monoiqa::par::Execution;
use monoiqa::regressor::{RegressorConfig, RegressorHead};
use monoiqa::train::{batch_gradients, QualityModel, TrainConfig};
use monoiqa::verify::monotonicity_suite;

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn features(n: usize, c: usize, l: usize, seed: u64) -> Vec<Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let data = (0..c * l).map(|_| rng.random_range(-0.1..0.1)).collect();
            Matrix::from_vec(c, l, data).unwrap()
        })
        .collect()
}

fn regressor(c: &mut Criterion) {
    let mut group = c.benchmark_group("regressor_batch32");
    for channels in [32, 64] {
        let head = RegressorHead::new(RegressorConfig::new(channels), 1).unwrap();
        let feats = features(32, channels, 64, 2);
        let refs: Vec<&Matrix> = feats.iter().collect();
        let upstream = vec![1.0 / 32.0; 32];
        for (name, exec) in MODES {
            group.bench_with_input(
                BenchmarkId::new(format!("forward/{name}"), channels),
                &refs,
                |b, refs| b.iter(|| head.forward_batch_in(exec, black_box(refs)).unwrap()),
            );
            group.bench_with_input(
                BenchmarkId::new(format!("backward/{name}"), channels),
                &refs,
                |b, refs| {
                    b.iter(|| {
                        head.batch_backward_in(exec, black_box(refs), &upstream)
                            .unwrap()
                    })
                },
            );
        }
    }
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch_gradients");
    let config = TrainConfig::default();
    let model = QualityModel::init(32, &["d"], &config).unwrap();
    let feats = features(32, 32, 64, 3);
    let refs: Vec<&Matrix> = feats.iter().collect();
    let mos: Vec<f64> = (0..32).map(|i| i as f64 * 0.3).collect();
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| batch_gradients(&model, exec, "d", black_box(&refs), &mos, 1.0).unwrap())
        });
    }
    group.finish();
}

fn monotonicity(c: &mut Criterion) {
    let mut group = c.benchmark_group("monotonicity_suite_3x100");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| monotonicity_suite(exec, &[3, 5, 7], 100, 100, black_box(7)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, regressor, training_step, monotonicity);
criterion_main!(benches);
