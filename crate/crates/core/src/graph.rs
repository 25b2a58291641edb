//! Gaussian-weighted kNN affinity graphs and their normalized Laplacians.

use std::cmp::Ordering;
use std::path::Path;

use crate::dataio::{write_atomic, EmbeddingMatrix};
use crate::exec;
use crate::linalg::{CsrMatrix, SymmetricOperator};
use crate::{Error, Result};

/// Symmetric kNN graph with weights `exp(−‖z_i − z_j‖² / σ²)`.
#[derive(Clone, Debug)]
pub struct AffinityGraph {
    weights: CsrMatrix,
    sigma: f64,
    knn_k: usize,
}

impl AffinityGraph {
    pub fn weights(&self) -> &CsrMatrix {
        &self.weights
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn knn_k(&self) -> usize {
        self.knn_k
    }

    pub fn n_points(&self) -> usize {
        self.weights.n_rows()
    }

    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n_points())
            .map(|i| self.weights.row(i).map(|(_, w)| w).sum())
            .collect()
    }

    /// Number of connected components (edges with positive weight).
    pub fn connected_components(&self) -> usize {
        let n = self.n_points();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (i, j, w) in self.weights.triplets() {
            if w > 0.0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        (0..n).filter(|&i| find(&mut parent, i) == i).count()
    }

    /// Debug dump of the weights as `i,j,w` lines.
    pub fn write_coo_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (i, j, w) in self.weights.triplets() {
            out.push_str(&format!("{i},{j},{w:.17e}\n"));
        }
        write_atomic(path, out.as_bytes())
    }
}

/// `(squared distance, index)` of the `k` nearest neighbours of every point,
/// ties broken by lower index, self excluded.
pub fn knn_lists(z: &EmbeddingMatrix, k: usize) -> Result<Vec<Vec<(f64, usize)>>> {
    let n = z.n_points();
    if k == 0 {
        return Err(Error::InvalidInput("knn k must be at least 1".into()));
    }
    if k >= n {
        return Err(Error::KnnTooLarge { k, n });
    }
    let d = z.dim();
    let rows = z.row_major();
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
    };
    Ok(exec::map_range(n, |i| {
        let zi = &rows[i * d..(i + 1) * d];
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let zj = &rows[j * d..(j + 1) * d];
                let d2: f64 = zi.iter().zip(zj).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, j)
            })
            .collect();
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, by_distance);
            cand.truncate(k);
        }
        cand.sort_by(by_distance);
        cand
    }))
}

/// Builds the symmetrized kNN graph. The bandwidth `σ` is the mean distance
/// from each point to its `k`-th nearest neighbour, taken from the directed
/// lists before symmetrization.
pub fn knn_graph(z: &EmbeddingMatrix, k: usize) -> Result<AffinityGraph> {
    let n = z.n_points();
    let lists = knn_lists(z, k)?;
    let sigma = lists.iter().map(|l| l[k - 1].0.sqrt()).sum::<f64>() / n as f64;
    if !(sigma > 0.0) {
        return Err(Error::DegenerateBandwidth);
    }
    let sigma2 = sigma * sigma;
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, list) in lists.iter().enumerate() {
        for &(d2, j) in list {
            // d²(i, j) and d²(j, i) are bitwise equal, so both directions
            // carry the same weight whichever list the edge came from.
            let w = (-d2 / sigma2).exp();
            rows[i].push((j, w));
            rows[j].push((i, w));
        }
    }
    let graph = AffinityGraph {
        weights: CsrMatrix::from_rows(n, rows),
        sigma,
        knn_k: k,
    };
    let components = graph.connected_components();
    if components > 1 {
        log::warn!(
            "kNN graph (k = {k}, N = {n}) has {components} connected components; \
             expect {components} near-zero Laplacian eigenvalues"
        );
    }
    Ok(graph)
}

/// `L = I − D^{−1/2} W D^{−1/2}`.
#[derive(Clone, Debug)]
pub struct Laplacian {
    matrix: CsrMatrix,
    degrees: Vec<f64>,
}

impl Laplacian {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn n_points(&self) -> usize {
        self.matrix.n_rows()
    }
}

impl SymmetricOperator for Laplacian {
    fn dim(&self) -> usize {
        self.matrix.n_rows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matrix.matvec(x, y)
    }
}

pub fn normalized_laplacian(g: &AffinityGraph) -> Result<Laplacian> {
    let degrees = g.degrees();
    if let Some(i) = degrees.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::IsolatedVertex(i));
    }
    let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let n = g.n_points();
    let rows = (0..n)
        .map(|i| {
            let mut row: Vec<(usize, f64)> = g
                .weights
                .row(i)
                .filter(|&(j, _)| j != i)
                .map(|(j, w)| (j, -w * inv_sqrt[i] * inv_sqrt[j]))
                .collect();
            row.push((i, 1.0 - g.weights.get(i, i) * inv_sqrt[i] * inv_sqrt[i]));
            row
        })
        .collect();
    let matrix = CsrMatrix::from_rows(n, rows).symmetrized();
    Ok(Laplacian { matrix, degrees })
}

/// Laplacian built directly from a weight matrix; used for hand-made graphs.
pub fn laplacian_from_weights(weights: CsrMatrix) -> Result<Laplacian> {
    if weights.n_rows() != weights.n_cols() {
        return Err(Error::ShapeMismatch {
            expected: "square weight matrix".into(),
            found: format!("{}x{}", weights.n_rows(), weights.n_cols()),
        });
    }
    normalized_laplacian(&AffinityGraph {
        weights,
        sigma: f64::NAN,
        knn_k: 0,
    })
}
