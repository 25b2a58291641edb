//! Ambient-space comparison methods: raw cosine, orthogonal Procrustes,
//! relative representations and regularized CCA.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataio::{AnchorSet, EmbeddingMatrix};
use crate::linalg::{inverse_sqrt_spd, symmetric_eigen_sorted};
use crate::retrieval::{inner_product_scores, Direction, ScoreMatrix};
use crate::{Error, Result};

/// How both modalities are cut down to a shared dimension.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// Keep the first `min(d_v, d_t)` coordinates.
    #[default]
    FirstCoords,
    /// Project each modality onto its own top principal axes.
    Pca,
}

/// Both matrices reduced to `min(d_v, d_t)` columns.
pub fn truncate_pair(
    zv: &EmbeddingMatrix,
    zt: &EmbeddingMatrix,
    mode: Truncation,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = zv.dim().min(zt.dim());
    match mode {
        Truncation::FirstCoords => Ok((
            zv.data().columns(0, d).into_owned(),
            zt.data().columns(0, d).into_owned(),
        )),
        Truncation::Pca => Ok((pca_project(zv.data(), d), pca_project(zt.data(), d))),
    }
}

/// Centered data projected on its `d` leading principal axes.
fn pca_project(z: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let centered = center_columns(z).0;
    let cov = centered.transpose() * &centered;
    let (_, vecs) = symmetric_eigen_sorted(cov);
    let dim = z.ncols();
    let mut axes = DMatrix::zeros(dim, d);
    for c in 0..d {
        axes.set_column(c, &vecs.column(dim - 1 - c));
    }
    crate::spectral::normalize_signs(&mut axes);
    centered * axes
}

fn center_columns(z: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mean = DVector::from_iterator(z.ncols(), z.column_iter().map(|c| c.mean()));
    let mut out = z.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    (out, mean)
}

fn normalized_rows(z: &DMatrix<f64>, name: &'static str) -> Result<DMatrix<f64>> {
    let mut out = z.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let norm = row.norm();
        if norm == 0.0 {
            return Err(Error::ZeroNormRow {
                matrix: name,
                row: i,
            });
        }
        row /= norm;
    }
    Ok(out)
}

/// Row-wise cosine similarity between two matrices with equal widths.
pub fn cosine_scores(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<ScoreMatrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            context: "cosine scores",
            expected: a.ncols(),
            found: b.ncols(),
        });
    }
    let a = normalized_rows(a, "query")?;
    let b = normalized_rows(b, "target")?;
    ScoreMatrix::new(
        inner_product_scores(&a, &b, |_, _, dot| dot),
        Direction::I2t,
    )
}

pub fn raw_cosine_scores(zv: &EmbeddingMatrix, zt: &EmbeddingMatrix) -> Result<ScoreMatrix> {
    let (a, b) = truncate_pair(zv, zt, Truncation::FirstCoords)?;
    cosine_scores(&a, &b)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcrustesOptions {
    /// Subtract each modality's anchor mean before fitting and scoring.
    pub center: bool,
    pub truncation: Truncation,
}

/// `R = argmin_{RᵀR = I} ‖Z_v,S R − Z_t,S‖_F`, reflections allowed.
#[derive(Clone, Debug)]
pub struct ProcrustesAlignment {
    rotation: DMatrix<f64>,
    truncation_dim: usize,
    options: ProcrustesOptions,
    means: Option<(DVector<f64>, DVector<f64>)>,
}

fn anchor_rows(z: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), z.ncols(), |r, c| z[(idx[r], c)])
}

fn check_anchors(anchors: &AnchorSet, n_src: usize, n_tgt: usize) -> Result<()> {
    if anchors.budget() == 0 {
        return Err(Error::InvalidInput(
            "at least one anchor pair is required".into(),
        ));
    }
    for &(s, t) in anchors.pairs() {
        if s >= n_src {
            return Err(Error::AnchorOutOfRange { index: s, n: n_src });
        }
        if t >= n_tgt {
            return Err(Error::AnchorOutOfRange { index: t, n: n_tgt });
        }
    }
    Ok(())
}

impl ProcrustesAlignment {
    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    pub fn truncation_dim(&self) -> usize {
        self.truncation_dim
    }

    fn prepare(
        &self,
        zv: &EmbeddingMatrix,
        zt: &EmbeddingMatrix,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (mut a, mut b) = truncate_pair(zv, zt, self.options.truncation)?;
        if a.ncols() != self.truncation_dim {
            return Err(Error::DimensionMismatch {
                context: "Procrustes input",
                expected: self.truncation_dim,
                found: a.ncols(),
            });
        }
        if let Some((mv, mt)) = &self.means {
            for mut row in a.row_iter_mut() {
                row -= mv.transpose();
            }
            for mut row in b.row_iter_mut() {
                row -= mt.transpose();
            }
        }
        Ok((a, b))
    }

    /// Cosine between `Z_v R` and `Z_t`.
    pub fn scores(&self, zv: &EmbeddingMatrix, zt: &EmbeddingMatrix) -> Result<ScoreMatrix> {
        let (a, b) = self.prepare(zv, zt)?;
        cosine_scores(&(a * &self.rotation), &b)
    }
}

pub fn fit_procrustes(
    zv: &EmbeddingMatrix,
    zt: &EmbeddingMatrix,
    anchors: &AnchorSet,
    options: ProcrustesOptions,
) -> Result<ProcrustesAlignment> {
    check_anchors(anchors, zv.n_points(), zt.n_points())?;
    let (a, b) = truncate_pair(zv, zt, options.truncation)?;
    let mut xs = anchor_rows(&a, &anchors.source_indices());
    let mut ys = anchor_rows(&b, &anchors.target_indices());
    let means = if options.center {
        let (cx, mx) = center_columns(&xs);
        let (cy, my) = center_columns(&ys);
        xs = cx;
        ys = cy;
        Some((mx, my))
    } else {
        None
    };
    let cross = xs.transpose() * ys;
    if cross.iter().all(|&v| v == 0.0) {
        return Err(Error::Singular("anchor cross-covariance is zero".into()));
    }
    let rotation = crate::linalg::nearest_orthogonal(&cross)?;
    Ok(ProcrustesAlignment {
        rotation,
        truncation_dim: a.ncols(),
        options,
        means,
    })
}

/// Row `i` holds the cosines of point `i` to each anchor, in anchor order.
#[derive(Clone, Debug)]
pub struct RelativeRepresentation {
    matrix: DMatrix<f64>,
}

impl RelativeRepresentation {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

pub fn relative_representation(
    z: &EmbeddingMatrix,
    anchors: &[usize],
) -> Result<RelativeRepresentation> {
    if anchors.is_empty() {
        return Err(Error::InvalidInput(
            "relative representation needs anchors".into(),
        ));
    }
    let n = z.n_points();
    if let Some(&index) = anchors.iter().find(|&&a| a >= n) {
        return Err(Error::AnchorOutOfRange { index, n });
    }
    let unit = normalized_rows(z.data(), "embedding")?;
    let anchor_rows = anchor_rows(&unit, anchors);
    let matrix = inner_product_scores(&unit, &anchor_rows, |_, _, dot| dot.clamp(-1.0, 1.0));
    Ok(RelativeRepresentation { matrix })
}

/// Cosine between the two modalities' relative representations.
pub fn relative_scores(
    zv: &EmbeddingMatrix,
    zt: &EmbeddingMatrix,
    anchors: &AnchorSet,
) -> Result<ScoreMatrix> {
    check_anchors(anchors, zv.n_points(), zt.n_points())?;
    let rv = relative_representation(zv, &anchors.source_indices())?;
    let rt = relative_representation(zt, &anchors.target_indices())?;
    cosine_scores(rv.matrix(), rt.matrix())
}

/// Smallest anchor count for which CCA is attempted.
pub const CCA_MIN_ANCHORS: usize = 20;

pub const CCA_DEFAULT_RIDGE: f64 = 1e-3;

/// Paired projections onto a shared canonical space.
#[derive(Clone, Debug)]
pub struct CcaFit {
    proj_v: DMatrix<f64>,
    proj_t: DMatrix<f64>,
    mean_v: DVector<f64>,
    mean_t: DVector<f64>,
    correlations: Vec<f64>,
}

impl CcaFit {
    pub fn correlations(&self) -> &[f64] {
        &self.correlations
    }

    pub fn n_components(&self) -> usize {
        self.correlations.len()
    }

    pub fn project_source(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        centered_by(z, &self.mean_v) * &self.proj_v
    }

    pub fn project_target(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        centered_by(z, &self.mean_t) * &self.proj_t
    }

    /// Cosine in the canonical space.
    pub fn scores(&self, zv: &EmbeddingMatrix, zt: &EmbeddingMatrix) -> Result<ScoreMatrix> {
        cosine_scores(
            &self.project_source(zv.data()),
            &self.project_target(zt.data()),
        )
    }
}

fn centered_by(z: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = z.clone();
    for mut row in out.row_iter_mut() {
        row -= mean.transpose();
    }
    out
}

/// Default component count, `min(|S| − 1, d_v, d_t)`.
pub fn cca_default_components(budget: usize, dv: usize, dt: usize) -> usize {
    budget.saturating_sub(1).min(dv).min(dt)
}

/// Regularized CCA fitted on the anchor rows: each view is whitened with
/// `(Σ + ridge I)^{−1/2}` and the whitened cross-covariance is decomposed by SVD.
pub fn fit_cca(
    zv: &EmbeddingMatrix,
    zt: &EmbeddingMatrix,
    anchors: &AnchorSet,
    ridge: f64,
    n_components: usize,
) -> Result<CcaFit> {
    check_anchors(anchors, zv.n_points(), zt.n_points())?;
    let s = anchors.budget();
    let limit = cca_default_components(s, zv.dim(), zt.dim());
    if n_components == 0 || n_components > limit {
        return Err(Error::InvalidConfig(format!(
            "CCA with {s} anchors and dims ({}, {}) supports 1..={limit} components, got {n_components}",
            zv.dim(),
            zt.dim()
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "CCA ridge must be nonnegative, got {ridge}"
        )));
    }
    let (xs, mean_v) = center_columns(&anchor_rows(zv.data(), &anchors.source_indices()));
    let (ys, mean_t) = center_columns(&anchor_rows(zt.data(), &anchors.target_indices()));
    let scale = 1.0 / (s as f64 - 1.0);
    let whiten = |m: &DMatrix<f64>, view: &str| {
        let mut cov = m.transpose() * m * scale;
        for i in 0..cov.nrows() {
            cov[(i, i)] += ridge;
        }
        inverse_sqrt_spd(cov, 1e-12).ok_or_else(|| {
            Error::Singular(format!(
                "{view} covariance is singular; use a positive CCA ridge"
            ))
        })
    };
    let wv = whiten(&xs, "source")?;
    let wt = whiten(&ys, "target")?;
    let cross = &wv * (xs.transpose() * &ys * scale) * &wt;
    let svd = nalgebra::SVD::new(cross, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Singular("CCA SVD failed".into())),
    };
    Ok(CcaFit {
        proj_v: wv * u.columns(0, n_components),
        proj_t: wt * v_t.transpose().columns(0, n_components),
        mean_v,
        mean_t,
        correlations: svd
            .singular_values
            .iter()
            .take(n_components)
            .copied()
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EmbeddingMatrix::new(
            DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng)),
            "g",
        )
        .unwrap()
    }

    fn all_anchors(n: usize) -> AnchorSet {
        AnchorSet::new((0..n).map(|i| (i, i)).collect(), n, n).unwrap()
    }

    #[test]
    fn raw_cosine_self_and_orthogonal() {
        let z = gaussian(10, 4, 1);
        let s = raw_cosine_scores(&z, &z).unwrap();
        for i in 0..10 {
            assert!((s.scores()[(i, i)] - 1.0).abs() < 1e-12);
        }
        let a = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], "a").unwrap();
        let b =
            EmbeddingMatrix::from_rows(&[vec![0.0, 3.0, 9.0], vec![2.0, 0.0, 9.0]], "b").unwrap();
        let s = raw_cosine_scores(&a, &b).unwrap();
        assert_eq!(s.scores()[(0, 0)], 0.0);
        assert_eq!(s.scores()[(0, 1)], 1.0);
        let zero = EmbeddingMatrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]], "z").unwrap();
        assert!(matches!(
            raw_cosine_scores(&zero, &a),
            Err(Error::ZeroNormRow { row: 0, .. })
        ));
    }

    #[test]
    fn procrustes_self_is_identity() {
        let z = gaussian(30, 5, 2);
        let p = fit_procrustes(&z, &z, &all_anchors(30), ProcrustesOptions::default()).unwrap();
        assert!((p.rotation() - DMatrix::identity(5, 5)).abs().max() < 1e-8);
    }

    #[test]
    fn procrustes_single_anchor_in_2d() {
        let a = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0], vec![0.3, 0.2]], "a").unwrap();
        let (s, c) = (0.8f64, 0.6f64);
        let b = EmbeddingMatrix::from_rows(&[vec![2.0 * c, 2.0 * s], vec![1.0, 1.0]], "b").unwrap();
        let anchors = AnchorSet::new(vec![(0, 0)], 2, 2).unwrap();
        let r = fit_procrustes(&a, &b, &anchors, ProcrustesOptions::default()).unwrap();
        let r = r.rotation();
        // Row-vector convention: (1, 0) R must point along (c, s).
        assert!((r[(0, 0)] - c).abs() < 1e-12 && (r[(0, 1)] - s).abs() < 1e-12);
        // The second row is ±(−s, c): the rotation or its reflection partner.
        assert!((r[(1, 0)].abs() - s).abs() < 1e-12 && (r[(1, 1)].abs() - c).abs() < 1e-12);
    }

    #[test]
    fn pca_truncation_is_centered() {
        let z = gaussian(40, 6, 3);
        let (a, _) = truncate_pair(&z, &gaussian(40, 4, 4), Truncation::Pca).unwrap();
        assert_eq!(a.ncols(), 4);
        let col_means: Vec<f64> = a.column_iter().map(|c| c.mean()).collect();
        assert!(col_means.iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn relative_rep_self_anchor_is_one() {
        let z = gaussian(12, 3, 5);
        let r = relative_representation(&z, &[4, 7]).unwrap();
        assert!((r.matrix()[(4, 0)] - 1.0).abs() < 1e-12);
        assert!((r.matrix()[(7, 1)] - 1.0).abs() < 1e-12);
        assert!(r.matrix().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(relative_representation(&z, &[]).is_err());
    }

    #[test]
    fn cca_self_correlation() {
        let z = gaussian(300, 5, 6);
        let fit = fit_cca(&z, &z, &all_anchors(300), 1e-6, 5).unwrap();
        for c in fit.correlations() {
            assert!((c - 1.0).abs() < 1e-4, "{c}");
        }
        assert!(fit_cca(&z, &z, &all_anchors(300), 1e-3, 6).is_err());
    }

    #[test]
    fn cca_without_ridge_on_rank_deficient_views() {
        let z = gaussian(30, 40, 7);
        let anchors = AnchorSet::new((0..25).map(|i| (i, i)).collect(), 30, 30).unwrap();
        assert!(matches!(
            fit_cca(&z, &z, &anchors, 0.0, 5),
            Err(Error::Singular(_))
        ));
    }
}
