//! Functional maps between spectral bases: the regularized anchor solve, the
//! HKS variant, pointwise recovery, ZoomOut refinement and composition.

use std::cmp::Ordering;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataio::{read_matrix_binary, write_matrix_binary, write_report, AnchorSet};
use crate::exec;
use crate::linalg::{nearest_orthogonal, solve_spd};
use crate::spectral::{HksDescriptor, SpectralBasis};
use crate::{Error, Result};

/// `k_tgt × k_src` operator taking source spectral coefficients to target ones.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionalMap {
    matrix: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapSidecar {
    pub source_dim: usize,
    pub target_dim: usize,
    pub config_hash: String,
}

impl FunctionalMap {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.is_empty() {
            return Err(Error::Empty);
        }
        if let Some(pos) = matrix.iter().position(|v| !v.is_finite()) {
            let rows = matrix.nrows();
            return Err(Error::NonFinite {
                row: pos % rows,
                col: pos / rows,
            });
        }
        Ok(FunctionalMap { matrix })
    }

    pub fn identity(k: usize) -> Self {
        FunctionalMap {
            matrix: DMatrix::identity(k, k),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn source_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn target_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_square(&self) -> bool {
        self.matrix.is_square()
    }

    /// Maps source spectral coefficients to target ones.
    pub fn apply(&self, coeffs: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("map input", self.source_dim(), coeffs.len())?;
        Ok(&self.matrix * coeffs)
    }

    /// Writes the matrix to `path` and `{dims, config_hash}` next to it as
    /// `path` with a `.json` extension.
    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        write_matrix_binary(&self.matrix, path)?;
        let sidecar = MapSidecar {
            source_dim: self.source_dim(),
            target_dim: self.target_dim(),
            config_hash: config_hash.to_owned(),
        };
        write_report(&sidecar, &path.with_extension("json"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        FunctionalMap::new(read_matrix_binary(path)?)
    }
}

fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

/// Spectral coefficients of the heat-smoothed indicator at each anchor:
/// column `s` is `exp(−Λτ) Φᵀ e_s`.
pub fn probe_matrix(basis: &SpectralBasis, anchors: &[usize], tau: f64) -> Result<DMatrix<f64>> {
    let n = basis.n_points();
    if let Some(&index) = anchors.iter().find(|&&a| a >= n) {
        return Err(Error::AnchorOutOfRange { index, n });
    }
    if !(tau >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "probe smoothing must be nonnegative, got {tau}"
        )));
    }
    let phi = basis.vectors();
    let lambda = basis.values();
    Ok(DMatrix::from_fn(basis.dim(), anchors.len(), |j, s| {
        (-lambda[j] * tau).exp() * phi[(anchors[s], j)]
    }))
}

/// Probe coefficients on both sides; column `s` of each comes from the same
/// correspondence (or the same HKS scale).
#[derive(Clone, Debug)]
pub struct ProbeCoeffs {
    source: DMatrix<f64>,
    target: DMatrix<f64>,
}

impl ProbeCoeffs {
    pub fn new(source: DMatrix<f64>, target: DMatrix<f64>) -> Result<Self> {
        check_dim("probe columns", source.ncols(), target.ncols())?;
        Ok(ProbeCoeffs { source, target })
    }

    pub fn from_anchors(
        src: &SpectralBasis,
        tgt: &SpectralBasis,
        anchors: &AnchorSet,
        tau: f64,
    ) -> Result<Self> {
        ProbeCoeffs::new(
            probe_matrix(src, &anchors.source_indices(), tau)?,
            probe_matrix(tgt, &anchors.target_indices(), tau)?,
        )
    }

    pub fn source(&self) -> &DMatrix<f64> {
        &self.source
    }

    pub fn target(&self) -> &DMatrix<f64> {
        &self.target
    }
}

/// Minimizes `‖CA − B‖² + λ1‖CΛ_src − Λ_tgt C‖² + λ2‖C‖²`.
///
/// Both penalties separate over rows of `C`, so row `i` solves
/// `(AAᵀ + λ1 diag((λ_src,j − λ_tgt,i)²) + λ2 I) c_i = A b_iᵀ`.
pub fn solve_fmap(
    probes: &ProbeCoeffs,
    lambda_src: &[f64],
    lambda_tgt: &[f64],
    lambda_comm: f64,
    lambda_tik: f64,
) -> Result<FunctionalMap> {
    let a = &probes.source;
    let b = &probes.target;
    check_dim("source eigenvalues", a.nrows(), lambda_src.len())?;
    check_dim("target eigenvalues", b.nrows(), lambda_tgt.len())?;
    if !(lambda_comm >= 0.0 && lambda_tik >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "regularization weights must be nonnegative (lambda_comm = {lambda_comm}, lambda_tik = {lambda_tik})"
        )));
    }
    let (k_src, k_tgt) = (a.nrows(), b.nrows());
    let gram = a * a.transpose();
    let rhs = a * b.transpose();

    let rows: Vec<Option<DVector<f64>>> = exec::map_range(k_tgt, |i| {
        let mut m = gram.clone();
        for j in 0..k_src {
            let gap = lambda_src[j] - lambda_tgt[i];
            m[(j, j)] += lambda_comm * gap * gap + lambda_tik;
        }
        solve_spd(m, &rhs.column(i).into_owned())
    });

    let mut c = DMatrix::zeros(k_tgt, k_src);
    for (i, row) in rows.into_iter().enumerate() {
        let row = row.ok_or_else(|| {
            Error::Singular(format!(
                "row {i} of the functional map system is not positive definite; \
                 the probes are rank-deficient, use lambda_tik > 0"
            ))
        })?;
        c.set_row(i, &row.transpose());
    }
    FunctionalMap::new(c)
}

/// Anchor-free variant: probes are the spectral coefficients of the HKS
/// columns, `A = Φ_srcᵀ H_src`, `B = Φ_tgtᵀ H_tgt`.
pub fn solve_fmap_unsupervised(
    hks_src: &HksDescriptor,
    hks_tgt: &HksDescriptor,
    src: &SpectralBasis,
    tgt: &SpectralBasis,
    lambda_comm: f64,
    lambda_tik: f64,
) -> Result<FunctionalMap> {
    check_dim("HKS scale count", hks_src.n_scales(), hks_tgt.n_scales())?;
    check_dim("source HKS rows", src.n_points(), hks_src.values().nrows())?;
    check_dim("target HKS rows", tgt.n_points(), hks_tgt.values().nrows())?;
    let probes = ProbeCoeffs::new(
        src.vectors().transpose() * hks_src.values(),
        tgt.vectors().transpose() * hks_tgt.values(),
    )?;
    solve_fmap(
        &probes,
        src.values().as_slice(),
        tgt.values().as_slice(),
        lambda_comm,
        lambda_tik,
    )
}

/// `assignment[i]` is the target point matched to source point `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointwiseMap {
    assignment: Vec<usize>,
    n_target: usize,
}

impl PointwiseMap {
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn n_target(&self) -> usize {
        self.n_target
    }

    /// Fraction of source points sent to their own index.
    pub fn identity_accuracy(&self) -> f64 {
        let hits = self
            .assignment
            .iter()
            .enumerate()
            .filter(|(i, t)| i == *t)
            .count();
        hits as f64 / self.assignment.len() as f64
    }
}

/// Nearest target row (in the first `C.target_dim()` coordinates) to each
/// source row mapped through `C`; ties go to the lower target index.
pub fn pointwise_from_fmap(
    c: &FunctionalMap,
    src: &SpectralBasis,
    tgt: &SpectralBasis,
) -> Result<PointwiseMap> {
    let (ks, kt) = (c.source_dim(), c.target_dim());
    if ks > src.dim() || kt > tgt.dim() {
        return Err(Error::InvalidInput(format!(
            "map is {kt}x{ks} but bases have {} (target) and {} (source) vectors",
            tgt.dim(),
            src.dim()
        )));
    }
    let mapped = src.vectors().columns(0, ks) * c.matrix().transpose();
    let mapped = row_major(&mapped);
    let target = row_major(&tgt.vectors().columns(0, kt).into_owned());
    let n_target = tgt.n_points();
    let assignment = exec::map_range(src.n_points(), |i| {
        let a = &mapped[i * kt..(i + 1) * kt];
        let mut best = (f64::INFINITY, 0);
        for j in 0..n_target {
            let b = &target[j * kt..(j + 1) * kt];
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            if d2.partial_cmp(&best.0) == Some(Ordering::Less) {
                best = (d2, j);
            }
        }
        best.1
    });
    Ok(PointwiseMap {
        assignment,
        n_target,
    })
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// The intermediate sizes `k_t = k0 + round((k_max − k0) t / steps)`, t = 1..=steps.
pub fn zoomout_schedule(k0: usize, k_max: usize, steps: usize) -> Vec<usize> {
    (1..=steps)
        .map(|t| k0 + ((k_max - k0) as f64 * t as f64 / steps as f64).round() as usize)
        .collect()
}

/// ZoomOut: alternately recover the pointwise map at the current size and
/// re-estimate `C = Φ_tgtᵀ P Φ_src` one size up, projecting onto the nearest
/// orthogonal matrix after every step.
pub fn zoomout(
    c0: &FunctionalMap,
    src: &SpectralBasis,
    tgt: &SpectralBasis,
    k_max: usize,
    steps: usize,
) -> Result<FunctionalMap> {
    zoomout_traced(c0, src, tgt, k_max, steps, |_, _| {})
}

/// [`zoomout`] calling `observe(step, map)` after every projection.
pub fn zoomout_traced(
    c0: &FunctionalMap,
    src: &SpectralBasis,
    tgt: &SpectralBasis,
    k_max: usize,
    steps: usize,
    mut observe: impl FnMut(usize, &FunctionalMap),
) -> Result<FunctionalMap> {
    if !c0.is_square() {
        return Err(Error::InvalidInput(format!(
            "ZoomOut needs a square initial map, got {}x{}",
            c0.target_dim(),
            c0.source_dim()
        )));
    }
    let k0 = c0.source_dim();
    if steps == 0 {
        return Err(Error::InvalidConfig(
            "ZoomOut needs at least one step".into(),
        ));
    }
    if k0 > k_max {
        return Err(Error::InvalidConfig(format!(
            "ZoomOut start {k0} exceeds its maximum {k_max}"
        )));
    }
    let available = src.dim().min(tgt.dim());
    if k_max > available {
        return Err(Error::SpectralDimTooLarge {
            requested: k_max,
            n: src.n_points(),
            available,
        });
    }
    check_dim("ZoomOut point counts", src.n_points(), tgt.n_points())?;

    let mut c = c0.clone();
    for (step, k) in zoomout_schedule(k0, k_max, steps).into_iter().enumerate() {
        let t = pointwise_from_fmap(&c, src, tgt)?;
        let phi_t = tgt.vectors();
        let pulled = DMatrix::from_fn(src.n_points(), k, |i, a| phi_t[(t.assignment[i], a)]);
        let estimate = pulled.transpose() * src.vectors().columns(0, k);
        c = FunctionalMap::new(nearest_orthogonal(&estimate)?)?;
        observe(step, &c);
    }
    Ok(c)
}

/// `C_ac = C_bc · C_ab`.
pub fn compose(c_ab: &FunctionalMap, c_bc: &FunctionalMap) -> Result<FunctionalMap> {
    check_dim("map composition", c_bc.source_dim(), c_ab.target_dim())?;
    FunctionalMap::new(c_bc.matrix() * c_ab.matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_basis(n: usize, k: usize, rng: &mut ChaCha8Rng) -> SpectralBasis {
        let q = nalgebra::QR::new(random_matrix(n, k, rng)).q();
        let mut vals: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.5)).collect();
        vals.sort_by(f64::total_cmp);
        SpectralBasis::from_parts(DVector::from_vec(vals), q).unwrap()
    }

    #[test]
    fn zero_smoothing_probe_is_basis_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random_basis(20, 5, &mut rng);
        let p = probe_matrix(&b, &[3, 7], 0.0).unwrap();
        for j in 0..5 {
            assert_eq!(p[(j, 0)], b.vectors()[(3, j)]);
            assert_eq!(p[(j, 1)], b.vectors()[(7, j)]);
        }
        let far = probe_matrix(&b, &[3], 1e6).unwrap();
        assert!(far.iter().all(|v| v.abs() < 1e-300));
        assert!(probe_matrix(&b, &[20], 0.1).is_err());
    }

    #[test]
    fn self_map_with_all_anchors_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = random_basis(30, 6, &mut rng);
        let all: Vec<usize> = (0..30).collect();
        let a = probe_matrix(&b, &all, 0.0).unwrap();
        let probes = ProbeCoeffs::new(a.clone(), a).unwrap();
        let lam = b.values().as_slice();
        let c = solve_fmap(&probes, lam, lam, 0.0, 0.0).unwrap();
        assert!((c.matrix() - DMatrix::identity(6, 6)).abs().max() < 1e-8);
    }

    #[test]
    fn heavy_ridge_shrinks_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let probes =
            ProbeCoeffs::new(random_matrix(4, 9, &mut rng), random_matrix(4, 9, &mut rng)).unwrap();
        let lam = [0.1, 0.2, 0.3, 0.4];
        let c = solve_fmap(&probes, &lam, &lam, 0.0, 1e12).unwrap();
        assert!(c.matrix().abs().max() < 1e-10);
    }

    #[test]
    fn rank_deficient_without_ridge_is_singular() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let probes = ProbeCoeffs::new(a.clone(), a).unwrap();
        let err = solve_fmap(&probes, &[0.5, 0.5], &[0.5, 0.5], 0.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::Singular(ref m) if m.contains("lambda_tik")));
    }

    #[test]
    fn pointwise_recovers_row_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = random_basis(25, 6, &mut rng);
        let perm: Vec<usize> = (0..25).map(|i| (i * 7 + 3) % 25).collect();
        // Target row perm[i] holds source row i.
        let mut moved = DMatrix::zeros(25, 6);
        for (i, &p) in perm.iter().enumerate() {
            moved.set_row(p, &b.vectors().row(i));
        }
        // Same entries in new rows, so sign normalization leaves columns alone.
        let t = SpectralBasis::from_parts(b.values().clone(), moved).unwrap();
        let c = FunctionalMap::identity(6);
        let map = pointwise_from_fmap(&c, &b, &t).unwrap();
        assert_eq!(map.assignment(), perm.as_slice());
    }

    #[test]
    fn zoomout_identity_fixed_point_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = random_basis(60, 20, &mut rng);
        let c0 = FunctionalMap::identity(8);
        let mut sizes = Vec::new();
        let out = zoomout_traced(&c0, &b, &b, 20, 3, |_, c| {
            let k = c.source_dim();
            sizes.push(k);
            let e = (c.matrix().transpose() * c.matrix() - DMatrix::identity(k, k)).norm();
            assert!(e < 1e-8);
        })
        .unwrap();
        assert_eq!(sizes, vec![12, 16, 20]);
        assert!((out.matrix() - DMatrix::identity(20, 20)).abs().max() < 1e-8);
    }

    #[test]
    fn schedule_is_even() {
        assert_eq!(zoomout_schedule(50, 100, 5), vec![60, 70, 80, 90, 100]);
        assert_eq!(zoomout_schedule(30, 60, 5), vec![36, 42, 48, 54, 60]);
    }

    #[test]
    fn zoomout_rejects_bad_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let b = random_basis(30, 10, &mut rng);
        let c0 = FunctionalMap::identity(5);
        assert!(zoomout(&c0, &b, &b, 11, 2).is_err());
        assert!(zoomout(&c0, &b, &b, 10, 0).is_err());
    }

    #[test]
    fn composition_identity_and_associativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = FunctionalMap::new(random_matrix(5, 5, &mut rng)).unwrap();
        assert_eq!(compose(&FunctionalMap::identity(5), &c).unwrap(), c);
        let d = FunctionalMap::new(random_matrix(5, 5, &mut rng)).unwrap();
        let e = FunctionalMap::new(random_matrix(5, 5, &mut rng)).unwrap();
        let left = compose(&compose(&c, &d).unwrap(), &e).unwrap();
        let right = compose(&c, &compose(&d, &e).unwrap()).unwrap();
        assert!((left.matrix() - right.matrix()).abs().max() < 1e-12);
        let wrong = FunctionalMap::new(random_matrix(4, 3, &mut rng)).unwrap();
        assert!(compose(&c, &wrong).is_err());
    }

    #[test]
    fn save_and_load_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let c = FunctionalMap::new(DMatrix::from_row_slice(
            2,
            3,
            &[1.0, 0.5, 0.25, 2.0, -1.0, 0.0],
        ))
        .unwrap();
        let path = dir.path().join("c.bin");
        c.save(&path, "abc").unwrap();
        assert_eq!(FunctionalMap::load(&path).unwrap(), c);
        let side: MapSidecar = crate::dataio::read_report(&dir.path().join("c.json")).unwrap();
        assert_eq!((side.source_dim, side.target_dim), (3, 2));
    }
}
