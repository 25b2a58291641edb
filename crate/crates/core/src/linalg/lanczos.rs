//! Thick-restart Lanczos for the smallest eigenpairs of a symmetric operator.
//!
//! The Krylov basis is kept fully reorthogonalized (two classical Gram-Schmidt
//! passes per step), so the projected matrix is formed from explicit inner
//! products instead of the three-term recurrence. On restart the wanted Ritz
//! vectors plus a buffer of neighbours are kept and the residual direction is
//! appended, which turns the projected matrix into a diagonal-plus-arrow block.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{symmetric_eigen_sorted, SymmetricOperator};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct LanczosParams {
    /// Absolute residual bound `‖A x − θ x‖` for every returned pair.
    pub tol: f64,
    pub max_restarts: usize,
    /// Krylov subspace size; defaults to `max(2·count + 20, count + 30)`,
    /// capped at the operator dimension.
    pub basis_size: Option<usize>,
    pub seed: u64,
}

impl Default for LanczosParams {
    fn default() -> Self {
        LanczosParams {
            tol: 1e-10,
            max_restarts: 1000,
            basis_size: None,
            seed: 0x1a2c_205e,
        }
    }
}

const BREAKDOWN: f64 = 1e-13;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// Orthogonalizes `w` against the first `cols` columns of `v`, twice.
/// Returns the accumulated projection coefficients.
fn reorthogonalize(v: &DMatrix<f64>, cols: usize, w: &mut [f64]) -> Vec<f64> {
    let mut coeffs = vec![0.0; cols];
    for _ in 0..2 {
        for (i, acc) in coeffs.iter_mut().enumerate() {
            let col = v.column(i);
            let c = dot(col.as_slice(), w);
            *acc += c;
            axpy(-c, col.as_slice(), w);
        }
    }
    coeffs
}

fn project_out(locked: Option<&DMatrix<f64>>, w: &mut [f64]) {
    if let Some(l) = locked {
        reorthogonalize(l, l.ncols(), w);
    }
}

fn random_unit_orthogonal(
    v: &DMatrix<f64>,
    cols: usize,
    locked: Option<&DMatrix<f64>>,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let n = v.nrows();
    loop {
        let mut w: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        project_out(locked, &mut w);
        reorthogonalize(v, cols, &mut w);
        let norm = dot(&w, &w).sqrt();
        if norm > 1e-8 {
            w.iter_mut().for_each(|x| *x /= norm);
            return w;
        }
    }
}

/// The `count` smallest eigenpairs of `op`: eigenvalues ascending, unit
/// eigenvectors as columns.
///
/// A single Krylov sequence sees only one direction per repeated eigenvalue,
/// so after convergence the solver probes the orthogonal complement of what
/// it found and merges any smaller eigenpairs it turns up.
pub fn smallest_eigenpairs<A: SymmetricOperator + ?Sized>(
    op: &A,
    count: usize,
    params: &LanczosParams,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = op.dim();
    if count == 0 || count > n {
        return Err(Error::InvalidInput(format!(
            "requested {count} eigenpairs of a {n}-dimensional operator"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (mut values, mut vectors) = run(op, count, params, None, &mut rng)?;
    if n > count {
        loop {
            let probe_count = count.min(n - count);
            let (pv, pvec) = run(op, probe_count, params, Some(&vectors), &mut rng)?;
            if pv[0] >= values[count - 1] - params.tol {
                break;
            }
            let mut merged: Vec<(f64, bool, usize)> = (0..count)
                .map(|i| (values[i], false, i))
                .chain((0..probe_count).map(|i| (pv[i], true, i)))
                .collect();
            merged.sort_by(|a, b| a.0.total_cmp(&b.0));
            merged.truncate(count);
            let mut next = DMatrix::zeros(n, count);
            for (dst, &(_, probe, src)) in merged.iter().enumerate() {
                let col = if probe {
                    pvec.column(src)
                } else {
                    vectors.column(src)
                };
                next.set_column(dst, &col);
            }
            values = DVector::from_iterator(count, merged.iter().map(|e| e.0));
            vectors = next;
        }
    }
    Ok((values, vectors))
}

fn run<A: SymmetricOperator + ?Sized>(
    op: &A,
    count: usize,
    params: &LanczosParams,
    locked: Option<&DMatrix<f64>>,
    rng: &mut ChaCha8Rng,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = op.dim();
    let free = n - locked.map_or(0, |l| l.ncols());
    let m = params
        .basis_size
        .unwrap_or_else(|| (2 * count + 20).max(count + 30))
        .max(count + 1)
        .min(free);

    let mut v = DMatrix::<f64>::zeros(n, m);
    let mut h = DMatrix::<f64>::zeros(m, m);
    let start = random_unit_orthogonal(&v, 0, locked, rng);
    v.column_mut(0).copy_from_slice(&start);

    let mut w = vec![0.0; n];
    let mut kept = 0;
    let mut converged = 0;
    for _restart in 0..=params.max_restarts {
        let mut beta = 0.0;
        for j in kept..m {
            op.apply(v.column(j).as_slice(), &mut w);
            project_out(locked, &mut w);
            let coeffs = reorthogonalize(&v, j + 1, &mut w);
            project_out(locked, &mut w);
            for (i, c) in coeffs.into_iter().enumerate() {
                h[(i, j)] = c;
                h[(j, i)] = c;
            }
            beta = dot(&w, &w).sqrt();
            if j + 1 < m {
                if beta <= BREAKDOWN {
                    // Invariant subspace found; continue in a fresh direction.
                    let fresh = random_unit_orthogonal(&v, j + 1, locked, rng);
                    v.column_mut(j + 1).copy_from_slice(&fresh);
                    h[(j + 1, j)] = 0.0;
                    h[(j, j + 1)] = 0.0;
                } else {
                    let next: Vec<f64> = w.iter().map(|x| x / beta).collect();
                    v.column_mut(j + 1).copy_from_slice(&next);
                    h[(j + 1, j)] = beta;
                    h[(j, j + 1)] = beta;
                }
            }
        }

        let sym = (&h + h.transpose()) * 0.5;
        let (theta, y) = symmetric_eigen_sorted(sym);
        let residual = |i: usize| beta * y[(m - 1, i)].abs();
        converged = (0..count)
            .take_while(|&i| residual(i) <= params.tol)
            .count();
        if converged == count || beta <= BREAKDOWN || m == free {
            let vectors = &v * y.columns(0, count);
            let values = DVector::from_iterator(count, theta.iter().take(count).copied());
            return Ok((values, vectors));
        }

        let keep = (count + (m - count) / 2).min(m - 1);
        let ritz = &v * y.columns(0, keep);
        v.columns_mut(0, keep).copy_from(&ritz);
        let next: Vec<f64> = w.iter().map(|x| x / beta).collect();
        v.column_mut(keep).copy_from_slice(&next);
        h.fill(0.0);
        for i in 0..keep {
            h[(i, i)] = theta[i];
            let s = beta * y[(m - 1, i)];
            h[(keep, i)] = s;
            h[(i, keep)] = s;
        }
        kept = keep;
    }
    Err(Error::NoConvergence {
        restarts: params.max_restarts,
        converged,
        wanted: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CsrMatrix;

    fn path_laplacian(n: usize) -> CsrMatrix {
        let rows = (0..n)
            .map(|i| {
                let mut r = Vec::new();
                let mut deg = 0.0;
                if i > 0 {
                    r.push((i - 1, -1.0));
                    deg += 1.0;
                }
                if i + 1 < n {
                    r.push((i + 1, -1.0));
                    deg += 1.0;
                }
                r.push((i, deg));
                r
            })
            .collect();
        CsrMatrix::from_rows(n, rows)
    }

    #[test]
    fn path_graph_matches_closed_form() {
        // Combinatorial path Laplacian: eigenvalues 2 − 2cos(πk/n).
        let n = 300;
        let op = path_laplacian(n);
        let (vals, vecs) = smallest_eigenpairs(&op, 8, &LanczosParams::default()).unwrap();
        for k in 0..8 {
            let expected = 2.0 - 2.0 * (std::f64::consts::PI * k as f64 / n as f64).cos();
            assert!(
                (vals[k] - expected).abs() < 1e-9,
                "k={k}: {} vs {expected}",
                vals[k]
            );
            let x = vecs.column(k);
            let mut ax = vec![0.0; n];
            op.apply(x.as_slice(), &mut ax);
            let r: f64 = ax
                .iter()
                .zip(x.iter())
                .map(|(a, b)| (a - vals[k] * b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(r < 1e-9);
        }
        let gram = vecs.transpose() * &vecs;
        assert!((gram - DMatrix::identity(8, 8)).abs().max() < 1e-10);
    }

    #[test]
    fn full_dimension_request_is_exact() {
        let op = path_laplacian(6);
        let (vals, _) = smallest_eigenpairs(&op, 6, &LanczosParams::default()).unwrap();
        let (dense, _) = symmetric_eigen_sorted(op.to_dense());
        assert!((vals - dense).abs().max() < 1e-12);
    }

    #[test]
    fn repeated_eigenvalues_are_found() {
        // Two disjoint paths: every eigenvalue has multiplicity two.
        let a = path_laplacian(40);
        let mut rows: Vec<Vec<(usize, f64)>> = (0..40).map(|i| a.row(i).collect()).collect();
        rows.extend((0..40).map(|i| a.row(i).map(|(j, v)| (j + 40, v)).collect::<Vec<_>>()));
        let op = CsrMatrix::from_rows(80, rows);
        let (vals, _) = smallest_eigenpairs(&op, 6, &LanczosParams::default()).unwrap();
        let (dense, _) = symmetric_eigen_sorted(op.to_dense());
        for k in 0..6 {
            assert!((vals[k] - dense[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_impossible_counts() {
        let op = path_laplacian(4);
        assert!(smallest_eigenpairs(&op, 0, &LanczosParams::default()).is_err());
        assert!(smallest_eigenpairs(&op, 5, &LanczosParams::default()).is_err());
    }
}
