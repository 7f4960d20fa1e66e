//! Data-parallel hot paths. Benchmark ids are the same with and without the `parallel` feature, so
//! the two builds compare through criterion baselines:
//!
//! ```text
//! cargo bench -p lxl-core --no-default-features --bench parallel_vs_sequential -- --save-baseline sequential
//! cargo bench -p lxl-core --bench parallel_vs_sequential -- --baseline sequential
//! ```

use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use lxl_core::atlas::{pairwise_distances, rf_train, EmbeddingSet, ForestConfig};
use lxl_core::dataset::generate_synthetic;
use lxl_core::models::{sample_prior, Aae, AaeConfig, BlackBox, ClassifierConfig, GrowthSchedule};
use lxl_core::parallel::is_parallel;
use lxl_core::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mode() -> &'static str {
    if is_parallel() {
        "parallel"
    } else {
        "sequential"
    }
}

fn points(n: usize, dims: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = labels
        .iter()
        .map(|&l| (0..dims).map(|_| rng.gen::<f64>() + l as f64 * 0.3).collect())
        .collect();
    (x, labels)
}

fn bench(c: &mut Criterion) {
    eprintln!("lxl-core built {}", mode());
    let mut g = c.benchmark_group("hot_paths");
    g.sample_size(10);

    let data = generate_synthetic(8, 28, 1).unwrap();
    let images: Vec<&Image> = data.items().iter().map(|i| &i.image).collect();
    g.bench_function("synthesize_64", |b| b.iter(|| generate_synthetic(8, 28, black_box(2)).unwrap()));

    let classifier = BlackBox::new(28, ClassifierConfig::default(), 1).unwrap();
    g.bench_function("classify_64", |b| b.iter(|| classifier.classify_batch(black_box(&images)).unwrap()));

    let mut aae = Aae::new(AaeConfig::default(), GrowthSchedule::desk([1, 1, 1]), 1).unwrap();
    aae.grow(1).unwrap();
    aae.grow(2).unwrap();
    aae.set_alpha(1.0);
    let zs = sample_prior(64, aae.latent_dim(), &mut ChaCha8Rng::seed_from_u64(3));
    let z_refs: Vec<&[f32]> = zs.iter().map(|z| z.as_slice()).collect();
    g.bench_function("decode_64", |b| b.iter(|| aae.decode_batch(black_box(&z_refs)).unwrap()));
    g.bench_function("encode_64", |b| b.iter(|| aae.encode_batch(black_box(&images)).unwrap()));

    let (x, labels) = points(200, 32, 4);
    let forest = ForestConfig {
        n_trees: 100,
        ..ForestConfig::default()
    };
    g.bench_function("forest_100_trees", |b| b.iter(|| rf_train(black_box(&x), &labels, &forest, 5).unwrap()));

    let (x, labels) = points(400, 32, 6);
    let ids = (0..x.len()).map(|i| format!("p{i}")).collect();
    let e = EmbeddingSet::new(ids, labels, x).unwrap();
    g.bench_function("distances_400", |b| {
        b.iter_batched(|| e.clone(), |e| pairwise_distances(&e).unwrap(), BatchSize::LargeInput)
    });
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
