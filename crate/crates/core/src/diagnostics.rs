//! Spectral-compatibility diagnostics of a functional map.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataio::write_atomic;
use crate::fmap::FunctionalMap;
use crate::spectral::SpectralBasis;
use crate::{Error, Result};

/// Eigenvalues closer than this to a neighbour are flagged as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-8;

/// RMS difference of the two spectra, each divided by its largest value.
pub fn spectral_distance(lambda_a: &[f64], lambda_b: &[f64]) -> Result<f64> {
    if lambda_a.len() != lambda_b.len() {
        return Err(Error::DimensionMismatch {
            context: "spectral distance",
            expected: lambda_a.len(),
            found: lambda_b.len(),
        });
    }
    if lambda_a.is_empty() {
        return Err(Error::Empty);
    }
    let max_a = lambda_a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_b = lambda_b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max_a > 0.0 && max_b > 0.0) {
        return Err(Error::InvalidInput(
            "spectral distance needs a positive largest eigenvalue on both sides".into(),
        ));
    }
    let mean_sq = lambda_a
        .iter()
        .zip(lambda_b)
        .map(|(a, b)| (a / max_a - b / max_b).powi(2))
        .sum::<f64>()
        / lambda_a.len() as f64;
    Ok(mean_sq.sqrt())
}

/// `ρ_i = C_ii² / Σ_j C_ij²` and its mean. An all-zero row gets `ρ_i = 0`.
pub fn diagonal_dominance(c: &DMatrix<f64>) -> Result<(Vec<f64>, f64)> {
    if !c.is_square() {
        return Err(Error::ShapeMismatch {
            expected: "square functional map".into(),
            found: format!("{}x{}", c.nrows(), c.ncols()),
        });
    }
    let rho: Vec<f64> = (0..c.nrows())
        .map(|i| {
            let energy: f64 = c.row(i).iter().map(|v| v * v).sum();
            if energy == 0.0 {
                log::warn!(
                    "row {i} of the functional map is all zero; diagonal dominance set to 0"
                );
                0.0
            } else {
                c[(i, i)] * c[(i, i)] / energy
            }
        })
        .collect();
    let mean = rho.iter().sum::<f64>() / rho.len() as f64;
    Ok((rho, mean))
}

/// `‖CᵀC − I‖_F / k` with `k` the source dimension.
pub fn orthogonality_error(c: &DMatrix<f64>) -> f64 {
    let k = c.ncols();
    (c.transpose() * c - DMatrix::identity(k, k)).norm() / k as f64
}

/// `‖C diag(Λ_src) − diag(Λ_tgt) C‖_F`.
pub fn commutativity_error(
    c: &DMatrix<f64>,
    lambda_src: &[f64],
    lambda_tgt: &[f64],
) -> Result<f64> {
    if c.ncols() != lambda_src.len() || c.nrows() != lambda_tgt.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{} map", lambda_tgt.len(), lambda_src.len()),
            found: format!("{}x{}", c.nrows(), c.ncols()),
        });
    }
    let sum: f64 = c
        .iter()
        .enumerate()
        .map(|(pos, v)| {
            let (i, j) = (pos % c.nrows(), pos / c.nrows());
            (v * (lambda_src[j] - lambda_tgt[i])).powi(2)
        })
        .sum();
    Ok(sum.sqrt())
}

/// Indices whose eigenvalue lies within `tol` of a neighbour's. Inside such
/// blocks the eigenvector order is arbitrary, and so is `ρ_i`.
pub fn degenerate_indices(values: &[f64], tol: f64) -> Vec<usize> {
    (0..values.len())
        .filter(|&i| {
            (i > 0 && (values[i] - values[i - 1]).abs() <= tol)
                || (i + 1 < values.len() && (values[i + 1] - values[i]).abs() <= tol)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub spectral_dim: usize,
    pub spectral_distance: f64,
    pub diag_dominance: Vec<f64>,
    pub diag_dominance_mean: f64,
    pub diag_dominance_max: f64,
    pub orthogonality_error: f64,
    pub commutativity_error: f64,
    pub eigenvalue_range_source: (f64, f64),
    pub eigenvalue_range_target: (f64, f64),
    pub degenerate_source: Vec<usize>,
    pub degenerate_target: Vec<usize>,
}

/// All diagnostics for a square map, with both bases truncated to its size.
pub fn diagnose(
    c: &FunctionalMap,
    src: &SpectralBasis,
    tgt: &SpectralBasis,
) -> Result<DiagnosticsReport> {
    if !c.is_square() {
        return Err(Error::ShapeMismatch {
            expected: "square functional map".into(),
            found: format!("{}x{}", c.target_dim(), c.source_dim()),
        });
    }
    let k = c.source_dim();
    let ls = src.truncated(k)?.values().as_slice().to_vec();
    let lt = tgt.truncated(k)?.values().as_slice().to_vec();
    let (rho, mean) = diagonal_dominance(c.matrix())?;
    Ok(DiagnosticsReport {
        spectral_dim: k,
        spectral_distance: spectral_distance(&ls, &lt)?,
        diag_dominance_max: rho.iter().copied().fold(0.0, f64::max),
        diag_dominance: rho,
        diag_dominance_mean: mean,
        orthogonality_error: orthogonality_error(c.matrix()),
        commutativity_error: commutativity_error(c.matrix(), &ls, &lt)?,
        eigenvalue_range_source: (ls[0], ls[k - 1]),
        eigenvalue_range_target: (lt[0], lt[k - 1]),
        degenerate_source: degenerate_indices(&ls, DEGENERACY_TOL),
        degenerate_target: degenerate_indices(&lt, DEGENERACY_TOL),
    })
}

/// Pass/fail thresholds on the three headline diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdProfile {
    pub max_spectral_distance: f64,
    pub min_diag_dominance_mean: f64,
    pub max_orthogonality_error: f64,
}

/// Reference values for a well-behaved shape correspondence.
pub const SHAPE_MATCHING: ThresholdProfile = ThresholdProfile {
    max_spectral_distance: 0.01,
    min_diag_dominance_mean: 0.7,
    max_orthogonality_error: 0.1,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileCheck {
    pub spectral_distance: bool,
    pub diag_dominance: bool,
    pub orthogonality: bool,
}

impl ProfileCheck {
    pub fn all(&self) -> bool {
        self.spectral_distance && self.diag_dominance && self.orthogonality
    }
}

impl ThresholdProfile {
    pub fn check(&self, r: &DiagnosticsReport) -> ProfileCheck {
        ProfileCheck {
            spectral_distance: r.spectral_distance < self.max_spectral_distance,
            diag_dominance: r.diag_dominance_mean > self.min_diag_dominance_mean,
            orthogonality: r.orthogonality_error < self.max_orthogonality_error,
        }
    }
}

/// `index,lambda_source,lambda_target,ratio[,rho]` rows, ratio = source/target.
pub fn spectrum_csv(lambda_src: &[f64], lambda_tgt: &[f64], rho: Option<&[f64]>) -> Result<String> {
    if lambda_src.len() != lambda_tgt.len() {
        return Err(Error::DimensionMismatch {
            context: "spectrum table",
            expected: lambda_src.len(),
            found: lambda_tgt.len(),
        });
    }
    let mut out = String::from("index,lambda_source,lambda_target,ratio");
    out.push_str(if rho.is_some() { ",rho\n" } else { "\n" });
    for (i, (a, b)) in lambda_src.iter().zip(lambda_tgt).enumerate() {
        out.push_str(&format!("{i},{a:.17e},{b:.17e},{:.17e}", a / b));
        if let Some(r) = rho {
            out.push_str(&format!(",{:.17e}", r[i]));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_spectrum_csv(
    path: &Path,
    lambda_src: &[f64],
    lambda_tgt: &[f64],
    rho: Option<&[f64]>,
) -> Result<()> {
    write_atomic(path, spectrum_csv(lambda_src, lambda_tgt, rho)?.as_bytes())
}
