use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fmap_core::dataio::sample_anchors;
use fmap_core::exec::{with_mode, Mode};
use fmap_core::fmap::{solve_fmap, ProbeCoeffs};
use fmap_core::graph::{knn_graph, normalized_laplacian};
use fmap_core::retrieval::{recall_both, spectral_scores};
use fmap_core::spectral::spectral_basis;
use fmap_core::synth::{gen_base_cloud, gen_pair, CloudSpec, Relation, Structure};
use fmap_core::FunctionalMap;

const MODES: [(&str, Mode); 2] = [
    ("parallel", Mode::Parallel),
    ("sequential", Mode::Sequential),
];

fn kernels(c: &mut Criterion) {
    let base = gen_base_cloud(
        CloudSpec {
            n_points: 1000,
            dim: 64,
            structure: Structure::GaussianMixture { components: 5 },
            seed: 1,
        },
        15,
    )
    .unwrap();
    let pair = gen_pair(&base, Relation::IsometricNoisy { sigma: 0.05 }, 2).unwrap();
    let basis_a = spectral_basis(
        &normalized_laplacian(&knn_graph(&pair.a, 15).unwrap()).unwrap(),
        100,
    )
    .unwrap();
    let basis_b = spectral_basis(
        &normalized_laplacian(&knn_graph(&pair.b, 15).unwrap()).unwrap(),
        100,
    )
    .unwrap();
    let anchors = sample_anchors(1000, 500, 3).unwrap();
    let probes = ProbeCoeffs::from_anchors(&basis_a, &basis_b, &anchors, 0.1).unwrap();
    let map = FunctionalMap::identity(100);
    let scores = spectral_scores(&map, &basis_a, &basis_b).unwrap();

    let mut group = c.benchmark_group("kernels");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::new("knn_graph", name), &mode, |b, &m| {
            b.iter(|| with_mode(m, || knn_graph(&pair.a, 15).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("spectral_scores", name), &mode, |b, &m| {
            b.iter(|| with_mode(m, || spectral_scores(&map, &basis_a, &basis_b).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("recall", name), &mode, |b, &m| {
            b.iter(|| with_mode(m, || recall_both(&scores, &[1, 5, 10]).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("solve_fmap", name), &mode, |b, &m| {
            b.iter(|| {
                with_mode(m, || {
                    solve_fmap(
                        &probes,
                        basis_a.values().as_slice(),
                        basis_b.values().as_slice(),
                        0.1,
                        1e-3,
                    )
                    .unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
