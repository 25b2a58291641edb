//! Sparse storage, dense helpers and the iterative eigensolver.

mod lanczos;

pub use lanczos::{smallest_eigenpairs as lanczos_smallest, LanczosParams};

use nalgebra::{DMatrix, DVector};

use crate::exec;
use crate::{Error, Result};

/// Anything that can multiply a vector by a symmetric matrix.
pub trait SymmetricOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists. Each row is sorted by
    /// column; repeated columns keep their first value.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n_rows = rows.len();
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            row.dedup_by_key(|&mut (j, _)| j);
            for (j, v) in row {
                debug_assert!(j < n_cols);
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of row `i`, sorted by column.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[i]..self.indptr[i + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.indptr[i + 1] - self.indptr[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.indptr[i]..self.indptr[i + 1];
        match self.indices[range.clone()].binary_search(&j) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    /// All stored entries as `(row, column, value)`.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut rows = vec![Vec::new(); self.n_cols];
        for (i, j, v) in self.triplets() {
            rows[j].push((i, v));
        }
        CsrMatrix::from_rows(self.n_rows, rows)
    }

    /// Exact structural and numerical symmetry.
    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols && self.triplets().all(|(i, j, v)| self.get(j, i) == v)
    }

    /// `(A + Aᵀ) / 2`.
    pub fn symmetrized(&self) -> CsrMatrix {
        let t = self.transpose();
        let rows = (0..self.n_rows)
            .map(|i| {
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(self.row_nnz(i));
                let mut a = self.row(i).peekable();
                let mut b = t.row(i).peekable();
                loop {
                    match (a.peek().copied(), b.peek().copied()) {
                        (Some((ja, va)), Some((jb, vb))) if ja == jb => {
                            merged.push((ja, 0.5 * (va + vb)));
                            a.next();
                            b.next();
                        }
                        (Some((ja, va)), Some((jb, _))) if ja < jb => {
                            merged.push((ja, 0.5 * va));
                            a.next();
                        }
                        (Some(_), Some((jb, vb))) => {
                            merged.push((jb, 0.5 * vb));
                            b.next();
                        }
                        (Some((ja, va)), None) => {
                            merged.push((ja, 0.5 * va));
                            a.next();
                        }
                        (None, Some((jb, vb))) => {
                            merged.push((jb, 0.5 * vb));
                            b.next();
                        }
                        (None, None) => break,
                    }
                }
                merged
            })
            .collect();
        CsrMatrix::from_rows(self.n_cols, rows)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        exec::for_each_chunk_mut(y, 1, |i, out| {
            out[0] = self.row(i).map(|(j, v)| v * x[j]).sum();
        });
    }
}

impl SymmetricOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n_rows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y)
    }
}

impl SymmetricOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.nrows();
        y.iter_mut().for_each(|v| *v = 0.0);
        for (j, &xj) in x.iter().enumerate().take(n) {
            if xj != 0.0 {
                let col = self.column(j);
                for (yi, cij) in y.iter_mut().zip(col.iter()) {
                    *yi += cij * xj;
                }
            }
        }
    }
}

/// Full symmetric eigendecomposition with eigenvalues ascending and
/// eigenvectors as matching columns.
pub fn symmetric_eigen_sorted(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Nearest orthogonal matrix in Frobenius norm, `U Vᵀ` from the SVD.
pub fn nearest_orthogonal(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = nalgebra::SVD::new(m.clone(), true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => Ok(u * v_t),
        _ => Err(Error::Singular(
            "SVD failed to produce singular vectors".into(),
        )),
    }
}

/// Solves `M x = b` for symmetric positive definite `M`.
pub fn solve_spd(m: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    nalgebra::Cholesky::new(m).map(|c| c.solve(b))
}

/// Symmetric inverse square root `M^{-1/2}`; `None` unless every eigenvalue
/// exceeds `floor`.
pub fn inverse_sqrt_spd(m: DMatrix<f64>, floor: f64) -> Option<DMatrix<f64>> {
    let (values, vectors) = symmetric_eigen_sorted(m);
    if values.iter().any(|&v| v <= floor) {
        return None;
    }
    let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, j| {
        vectors[(i, j)] / values[j].sqrt()
    });
    Some(&scaled * vectors.transpose())
}

/// Largest singular value of the residual `(I − P Pᵀ) Q` for orthonormal
/// `P`, `Q`: the sine of the largest principal angle between their spans.
pub fn max_principal_angle_sin(p: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    let resid = q - p * (p.transpose() * q);
    nalgebra::SVD::new(resid, false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}
