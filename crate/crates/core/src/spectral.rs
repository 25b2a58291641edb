//! Truncated Laplacian eigenbases and heat kernel signatures.

use std::f64::consts::LN_10;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::dataio::write_matrix_binary;
use crate::graph::Laplacian;
use crate::linalg::{lanczos_smallest, symmetric_eigen_sorted, LanczosParams};
use crate::{Error, Result};

/// Eigenpairs below this are treated as constant (per-component) modes.
pub const TRIVIAL_EIGENVALUE: f64 = 1e-9;

/// Largest `N` handled by the dense solver under [`EigenSolver::Auto`].
pub const DENSE_LIMIT: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EigenSolver {
    /// Dense up to [`DENSE_LIMIT`] points, Lanczos above.
    Auto,
    Dense,
    Lanczos {
        tol: f64,
    },
}

impl EigenSolver {
    fn resolve(self, n: usize) -> EigenSolver {
        match self {
            EigenSolver::Auto if n <= DENSE_LIMIT => EigenSolver::Dense,
            EigenSolver::Auto => EigenSolver::Lanczos { tol: 1e-10 },
            other => other,
        }
    }
}

/// The `k_s` smallest non-trivial Laplacian eigenpairs, eigenvalues
/// nondecreasing, eigenvectors as orthonormal columns.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
    dropped: usize,
}

impl SpectralBasis {
    /// Wraps precomputed eigenpairs. Columns are sign-normalized.
    pub fn from_parts(values: DVector<f64>, mut vectors: DMatrix<f64>) -> Result<Self> {
        if values.len() != vectors.ncols() {
            return Err(Error::DimensionMismatch {
                context: "spectral basis columns",
                expected: values.len(),
                found: vectors.ncols(),
            });
        }
        if values.is_empty() {
            return Err(Error::Empty);
        }
        normalize_signs(&mut vectors);
        Ok(SpectralBasis {
            values,
            vectors,
            dropped: 0,
        })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn n_points(&self) -> usize {
        self.vectors.nrows()
    }

    /// How many near-zero eigenpairs were discarded before index 0.
    pub fn dropped_trivial(&self) -> usize {
        self.dropped
    }

    pub fn lambda_min(&self) -> f64 {
        self.values[0]
    }

    pub fn lambda_max(&self) -> f64 {
        self.values[self.dim() - 1]
    }

    /// The first `k` pairs.
    pub fn truncated(&self, k: usize) -> Result<SpectralBasis> {
        if k == 0 || k > self.dim() {
            return Err(Error::SpectralDimTooLarge {
                requested: k,
                n: self.n_points(),
                available: self.dim(),
            });
        }
        Ok(SpectralBasis {
            values: self.values.rows(0, k).into_owned(),
            vectors: self.vectors.columns(0, k).into_owned(),
            dropped: self.dropped,
        })
    }

    /// Writes `<stem>.values.bin` (1×k) and `<stem>.vectors.bin` (N×k).
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let values = DMatrix::from_row_slice(1, self.dim(), self.values.as_slice());
        write_matrix_binary(&values, &dir.join(format!("{stem}.values.bin")))?;
        write_matrix_binary(&self.vectors, &dir.join(format!("{stem}.vectors.bin")))
    }
}

/// Flips each column so its entry of largest magnitude is positive; the
/// lowest index wins among entries equal in magnitude up to round-off.
pub fn normalize_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let mut best = 0;
        let mut best_abs = f64::NEG_INFINITY;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs * (1.0 + 1e-12) {
                best = i;
                best_abs = v.abs();
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

pub fn spectral_basis(l: &Laplacian, k_s: usize) -> Result<SpectralBasis> {
    spectral_basis_with(l, k_s, EigenSolver::Auto)
}

/// Computes the `k_s + 1` smallest eigenpairs, drops every leading pair below
/// [`TRIVIAL_EIGENVALUE`] (at least one), and widens the window if too few
/// non-trivial pairs remain.
pub fn spectral_basis_with(
    l: &Laplacian,
    k_s: usize,
    solver: EigenSolver,
) -> Result<SpectralBasis> {
    let n = l.n_points();
    if k_s == 0 || k_s + 1 > n {
        return Err(Error::SpectralDimTooLarge {
            requested: k_s,
            n,
            available: n.saturating_sub(1),
        });
    }
    let (values, vectors) = match solver.resolve(n) {
        EigenSolver::Dense => symmetric_eigen_sorted(l.matrix().to_dense()),
        EigenSolver::Lanczos { tol } => {
            let params = LanczosParams {
                tol,
                ..LanczosParams::default()
            };
            let mut window = k_s + 1;
            loop {
                let (vals, vecs) = lanczos_smallest(l, window, &params)?;
                let dropped = count_trivial(&vals);
                if window - dropped >= k_s || window == n {
                    break (vals, vecs);
                }
                window = (dropped + k_s).min(n);
            }
        }
        EigenSolver::Auto => unreachable!("resolved above"),
    };
    let dropped = count_trivial(&values);
    let available = values.len() - dropped;
    if available < k_s {
        return Err(Error::SpectralDimTooLarge {
            requested: k_s,
            n,
            available,
        });
    }
    if dropped > 1 {
        log::warn!("dropped {dropped} near-zero eigenpairs (disconnected graph)");
    }
    let mut vectors = vectors.columns(dropped, k_s).into_owned();
    normalize_signs(&mut vectors);
    Ok(SpectralBasis {
        values: values.rows(dropped, k_s).into_owned(),
        vectors,
        dropped,
    })
}

fn count_trivial(values: &DVector<f64>) -> usize {
    values
        .iter()
        .take_while(|&&v| v < TRIVIAL_EIGENVALUE)
        .count()
        .max(1)
}

/// `Q` diffusion times spaced geometrically from `4 ln 10 / λ_max` to
/// `4 ln 10 / λ_min`, ascending.
pub fn hks_scales(basis: &SpectralBasis, q: usize) -> Result<Vec<f64>> {
    if q < 2 {
        return Err(Error::InvalidInput(format!(
            "HKS needs at least 2 scales, got {q}"
        )));
    }
    let (lo, hi) = (basis.lambda_min(), basis.lambda_max());
    if !(lo > 0.0) {
        return Err(Error::InvalidInput(format!(
            "HKS scales need positive eigenvalues (smallest retained is {lo})"
        )));
    }
    let (t_min, t_max) = (4.0 * LN_10 / hi, 4.0 * LN_10 / lo);
    let ratio = t_max / t_min;
    let mut scales: Vec<f64> = (0..q)
        .map(|i| t_min * ratio.powf(i as f64 / (q - 1) as f64))
        .collect();
    scales[q - 1] = t_max;
    Ok(scales)
}

/// Heat kernel signatures: column `q` holds `Σ_j exp(−λ_j τ_q) φ_j(i)²`.
#[derive(Clone, Debug)]
pub struct HksDescriptor {
    values: DMatrix<f64>,
    scales: Vec<f64>,
}

impl HksDescriptor {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn n_scales(&self) -> usize {
        self.scales.len()
    }
}

pub fn hks(basis: &SpectralBasis, scales: &[f64]) -> Result<HksDescriptor> {
    if scales.is_empty() {
        return Err(Error::Empty);
    }
    if let Some(t) = scales.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "HKS scale {t} is not positive"
        )));
    }
    let squared = basis.vectors().map(|v| v * v);
    let decay = DMatrix::from_fn(basis.dim(), scales.len(), |j, q| {
        (-basis.values()[j] * scales[q]).exp()
    });
    Ok(HksDescriptor {
        values: squared * decay,
        scales: scales.to_vec(),
    })
}
