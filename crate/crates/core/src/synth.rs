//! Seeded synthetic "modality" pairs with known correspondence.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::EmbeddingMatrix;
use crate::{Error, Result};

/// Minimum center separation in units of the component standard deviation.
pub const MIXTURE_SEPARATION: f64 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    /// `components` unit-variance Gaussian blobs in contiguous row blocks.
    GaussianMixture { components: usize },
    /// The classic 2-manifold in the first three coordinates, zero-padded.
    SwissRoll,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Identical,
    Isometric,
    IsometricNoisy { sigma: f64 },
    Unaligned,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudSpec {
    pub n_points: usize,
    pub dim: usize,
    pub structure: Structure,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct BaseCloud {
    pub z: EmbeddingMatrix,
    pub spec: CloudSpec,
    /// Mixture component per row; all zero for the swiss roll.
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct SyntheticPair {
    pub a: EmbeddingMatrix,
    pub b: EmbeddingMatrix,
    pub relation: Relation,
    pub planted_transform: Option<DMatrix<f64>>,
    pub labels: Vec<usize>,
    pub seed: u64,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Contiguous block labels with sizes as equal as possible.
pub fn block_labels(n: usize, m: usize) -> Vec<usize> {
    (0..n).map(|i| i * m / n).collect()
}

/// Draws a point cloud. `knn_k` is the graph degree it will be used with;
/// the cloud must have at least `2 knn_k` points.
pub fn gen_base_cloud(spec: CloudSpec, knn_k: usize) -> Result<BaseCloud> {
    let CloudSpec {
        n_points: n,
        dim: d,
        structure,
        seed,
    } = spec;
    if n < 2 * knn_k || n < 2 {
        return Err(Error::InvalidConfig(format!(
            "synthetic cloud of {n} points is too small for knn k = {knn_k} (need at least {})",
            (2 * knn_k).max(2)
        )));
    }
    if d == 0 {
        return Err(Error::InvalidConfig(
            "synthetic dimension must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (data, labels) = match structure {
        Structure::SwissRoll => {
            if d < 3 {
                return Err(Error::InvalidConfig(format!(
                    "swiss roll needs d >= 3, got {d}"
                )));
            }
            let mut z = DMatrix::zeros(n, d);
            for i in 0..n {
                let t = 1.5 * PI * (1.0 + 2.0 * rng.random::<f64>());
                let h = 21.0 * rng.random::<f64>();
                z[(i, 0)] = t * t.cos();
                z[(i, 1)] = h;
                z[(i, 2)] = t * t.sin();
            }
            (z, vec![0; n])
        }
        Structure::GaussianMixture { components: m } => {
            if m == 0 || m > n {
                return Err(Error::InvalidConfig(format!(
                    "mixture needs 1..={n} components, got {m}"
                )));
            }
            let centers = mixture_centers(m, d, &mut rng)?;
            let labels = block_labels(n, m);
            let z = DMatrix::from_fn(n, d, |i, j| centers[(labels[i], j)] + gaussian(&mut rng));
            (z, labels)
        }
    };
    Ok(BaseCloud {
        z: EmbeddingMatrix::new(data, "synthetic")?,
        spec,
        labels,
    })
}

/// Centers at pairwise distance at least [`MIXTURE_SEPARATION`], by rejection.
fn mixture_centers(m: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    // Spread so that m well-separated centers fit comfortably in d dims.
    let spread = MIXTURE_SEPARATION * (m as f64).powf(1.0 / d as f64).max(1.0);
    let mut centers = DMatrix::<f64>::zeros(m, d);
    for c in 0..m {
        let mut placed = false;
        for _ in 0..10_000 {
            let cand: Vec<f64> = (0..d).map(|_| spread * gaussian(rng)).collect();
            let ok = (0..c).all(|o| {
                let d2: f64 = cand
                    .iter()
                    .enumerate()
                    .map(|(j, v): (usize, &f64)| (v - centers[(o, j)]).powi(2))
                    .sum();
                d2.sqrt() >= MIXTURE_SEPARATION
            });
            if ok {
                for (j, v) in cand.into_iter().enumerate() {
                    centers[(c, j)] = v;
                }
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidConfig(format!(
                "could not place {m} separated mixture centers in {d} dimensions"
            )));
        }
    }
    Ok(centers)
}

/// Haar-random orthogonal matrix: QR of a Gaussian matrix with the signs of
/// `R`'s diagonal folded into `Q`.
pub fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| gaussian(rng));
    let qr = nalgebra::QR::new(g);
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Second modality related to `base` by `relation`.
pub fn gen_pair(base: &BaseCloud, relation: Relation, seed: u64) -> Result<SyntheticPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let za = base.z.data();
    let (b, planted) = match relation {
        Relation::Identical => (za.clone(), None),
        Relation::Isometric => {
            let q = random_orthogonal(za.ncols(), &mut rng);
            (za * &q, Some(q))
        }
        Relation::IsometricNoisy { sigma } => {
            if !(sigma >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "noise level must be nonnegative, got {sigma}"
                )));
            }
            let q = random_orthogonal(za.ncols(), &mut rng);
            let scale = sigma * za.row_iter().map(|r| r.norm()).sum::<f64>() / za.nrows() as f64;
            let noise = DMatrix::from_fn(za.nrows(), za.ncols(), |_, _| scale * gaussian(&mut rng));
            (za * &q + noise, Some(q))
        }
        Relation::Unaligned => {
            let fresh = CloudSpec {
                seed: rng.random(),
                ..base.spec
            };
            (gen_base_cloud(fresh, 1)?.z.into_data(), None)
        }
    };
    Ok(SyntheticPair {
        a: base.z.clone().with_modality("a"),
        b: EmbeddingMatrix::new(b, "b")?,
        relation,
        planted_transform: planted,
        labels: base.labels.clone(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, d: usize, structure: Structure, seed: u64) -> CloudSpec {
        CloudSpec {
            n_points: n,
            dim: d,
            structure,
            seed,
        }
    }

    #[test]
    fn mixture_contract() {
        let c = gen_base_cloud(
            spec(300, 10, Structure::GaussianMixture { components: 3 }, 1),
            15,
        )
        .unwrap();
        assert_eq!((c.z.n_points(), c.z.dim()), (300, 10));
        for m in 0..3 {
            assert_eq!(c.labels.iter().filter(|&&l| l == m).count(), 100);
        }
        let again = gen_base_cloud(c.spec, 15).unwrap();
        assert_eq!(again.z.data(), c.z.data());
    }

    #[test]
    fn small_swiss_roll_is_rejected() {
        assert!(gen_base_cloud(spec(10, 5, Structure::SwissRoll, 0), 15).is_err());
        assert!(gen_base_cloud(spec(100, 2, Structure::SwissRoll, 0), 15).is_err());
    }

    #[test]
    fn swiss_roll_padding() {
        let c = gen_base_cloud(spec(50, 5, Structure::SwissRoll, 2), 15).unwrap();
        assert!(c.z.data().columns(3, 2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn orthogonal_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_orthogonal(7, &mut rng);
        assert!((q.transpose() * &q - DMatrix::identity(7, 7)).abs().max() < 1e-12);
    }

    #[test]
    fn isometric_preserves_distances() {
        let base = gen_base_cloud(
            spec(40, 4, Structure::GaussianMixture { components: 2 }, 4),
            5,
        )
        .unwrap();
        let p = gen_pair(&base, Relation::Isometric, 9).unwrap();
        let (a, b) = (p.a.data(), p.b.data());
        for (i, j) in [(0, 1), (5, 33), (17, 20)] {
            let da = (a.row(i) - a.row(j)).norm();
            let db = (b.row(i) - b.row(j)).norm();
            assert!((da - db).abs() < 1e-12);
        }
        assert!(p.planted_transform.is_some());
    }

    #[test]
    fn unaligned_keeps_labels_but_not_points() {
        let base = gen_base_cloud(
            spec(60, 3, Structure::GaussianMixture { components: 3 }, 5),
            5,
        )
        .unwrap();
        let p = gen_pair(&base, Relation::Unaligned, 11).unwrap();
        assert_eq!(p.labels, base.labels);
        assert_ne!(p.a.data(), p.b.data());
    }
}
