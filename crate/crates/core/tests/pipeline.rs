use fmap_core::dataio::read_report;
use fmap_core::pipeline::{
    ablate_k, align, compose, diagnose_pair, spectra, AblateSpec, AlignSpec, Method, RunWriter,
};
use fmap_core::synth::{gen_base_cloud, gen_pair, BaseCloud, CloudSpec, Relation, Structure};
use fmap_core::{Direction, EmbeddingMatrix, Error, PipelineConfig};

fn base(n: usize, seed: u64) -> BaseCloud {
    gen_base_cloud(
        CloudSpec {
            n_points: n,
            dim: 3,
            structure: Structure::SwissRoll,
            seed,
        },
        15,
    )
    .unwrap()
}

fn pair(n: usize, relation: Relation, seed: u64) -> (EmbeddingMatrix, EmbeddingMatrix) {
    let p = gen_pair(&base(n, seed), relation, seed + 100).unwrap();
    (p.a, p.b)
}

fn small() -> PipelineConfig {
    PipelineConfig {
        knn_k: 10,
        spectral_dim: 20,
        zoomout_start: 20,
        zoomout_max: 40,
        zoomout_steps: 4,
        ..PipelineConfig::default()
    }
}

#[test]
fn noise_raises_orthogonality_error_on_average() {
    let mean_eps = |sigma: f64| {
        (0..20)
            .map(|seed| {
                let (a, b) = pair(300, Relation::IsometricNoisy { sigma }, seed);
                let mut c = small();
                c.seed = seed;
                diagnose_pair(&a, &b, 50, &c)
                    .unwrap()
                    .diagnostics
                    .orthogonality_error
            })
            .sum::<f64>()
            / 20.0
    };
    let (lo, hi) = (mean_eps(0.01), mean_eps(0.1));
    assert!(hi >= lo, "sigma 0.1 mean {hi} < sigma 0.01 mean {lo}");
}

#[test]
fn unaligned_pair_is_not_diagonal() {
    let (a, b) = pair(400, Relation::Unaligned, 3);
    let d = diagnose_pair(&a, &b, 50, &small()).unwrap().diagnostics;
    assert!(d.diag_dominance_mean < 0.1, "{}", d.diag_dominance_mean);
}

#[test]
fn identical_pair_spectra_match() {
    let (a, b) = pair(200, Relation::Identical, 4);
    let (r, _, _) = spectra(&a, &b, &small()).unwrap();
    assert_eq!(r.spectral_distance, 0.0);
    assert_eq!(r.values_source, r.values_target);
}

#[test]
fn spectral_dim_too_large_is_a_config_error() {
    let (a, b) = pair(100, Relation::Identical, 5);
    let mut c = small();
    c.spectral_dim = 100;
    c.zoomout_start = 100;
    let err = spectra(&a, &b, &c).unwrap_err();
    assert!(matches!(err.root(), Error::InvalidConfig(_)), "{err}");
}

#[test]
fn every_method_runs_on_a_noisy_pair() {
    let (a, b) = pair(200, Relation::IsometricNoisy { sigma: 0.02 }, 6);
    for method in Method::ALL {
        let spec = AlignSpec {
            method,
            budgets: vec![20, 50],
            ..AlignSpec::default()
        };
        let r = align(&a, &b, &spec, &small()).unwrap();
        let expected = if method.supervised() { 2 } else { 1 };
        assert_eq!(r.cells.len(), expected, "{method}");
        for c in &r.cells {
            let r1 = c.image_space.get(Direction::I2t, 1).unwrap();
            assert!((0.0..=100.0).contains(&r1));
            assert_eq!(c.diagnostics.is_some(), method.spectral());
        }
    }
}

#[test]
fn fmap_beats_chance_on_a_noisy_pair() {
    let (a, b) = pair(300, Relation::IsometricNoisy { sigma: 0.01 }, 7);
    let spec = AlignSpec {
        budgets: vec![50],
        ..AlignSpec::default()
    };
    let r = align(&a, &b, &spec, &small()).unwrap();
    let r10 = r.cells[0].image_space.get(Direction::I2t, 10).unwrap();
    assert!(r10 > 10.0 * 100.0 * 10.0 / 300.0 / 3.0, "R@10 = {r10}");
}

#[test]
fn ablation_covers_each_dimension() {
    let (a, b) = pair(200, Relation::IsometricNoisy { sigma: 0.02 }, 8);
    let spec = AblateSpec {
        spectral_dims: vec![30, 10, 20],
        budget: 40,
    };
    let r = ablate_k(&a, &b, &spec, &small()).unwrap();
    let dims: Vec<usize> = r.rows.iter().map(|row| row.spectral_dim).collect();
    assert_eq!(dims, vec![10, 20, 30]);
    assert!(r
        .rows
        .iter()
        .all(|row| row.diagnostics.spectral_dim == row.spectral_dim));
}

#[test]
fn composing_through_an_identical_middle_matches_direct() {
    let (a, b) = pair(200, Relation::Identical, 9);
    let r = compose(&a, &b, &a, 20, true, &small()).unwrap();
    let get = |name: &str| {
        r.rows
            .iter()
            .find(|row| row.name == name)
            .unwrap()
            .image_space
            .get(Direction::I2t, 1)
            .unwrap()
    };
    assert_eq!(get("direct"), 100.0);
    assert_eq!(get("composed"), 100.0);
    assert_eq!(r.anchor_seeds, [0, 1, 2]);
}

#[test]
fn run_writer_wraps_reports_with_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let c = small();
    let w = RunWriter::new(dir.path(), &c).unwrap();
    w.json("x.json", "value", &[1.5, 2.0]).unwrap();
    w.config("test").unwrap();
    let v: serde_json::Value = read_report(&dir.path().join("x.json")).unwrap();
    assert_eq!(v["config"]["spectral_dim"], 20);
    assert_eq!(v["value"][0], 1.5);
    assert!(v.get("generated_unix_secs").is_none());
    let cfg: serde_json::Value = read_report(&dir.path().join("config.json")).unwrap();
    assert_eq!(cfg["config_hash"].as_str().unwrap(), c.hash());
    assert!(cfg["generated_unix_secs"].is_u64());
}
