//! Cross-modal scoring and Recall@K.
//!
//! Ground truth is row order: query `i` should retrieve target `i`.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::exec;
use crate::fmap::FunctionalMap;
use crate::spectral::SpectralBasis;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    I2t,
    T2i,
}

impl Direction {
    pub fn flipped(self) -> Direction {
        match self {
            Direction::I2t => Direction::T2i,
            Direction::T2i => Direction::I2t,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::I2t => "i2t",
            Direction::T2i => "t2i",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    ImageSpace,
    CaptionSpace,
}

/// Query-by-target similarities, larger is better.
#[derive(Clone, Debug)]
pub struct ScoreMatrix {
    scores: DMatrix<f64>,
    direction: Direction,
}

impl ScoreMatrix {
    pub fn new(scores: DMatrix<f64>, direction: Direction) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Empty);
        }
        if let Some(pos) = scores.iter().position(|v| !v.is_finite()) {
            let rows = scores.nrows();
            return Err(Error::NonFinite {
                row: pos % rows,
                col: pos / rows,
            });
        }
        Ok(ScoreMatrix { scores, direction })
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn n_queries(&self) -> usize {
        self.scores.nrows()
    }

    pub fn n_targets(&self) -> usize {
        self.scores.ncols()
    }

    /// The same similarities seen from the other side.
    pub fn transposed(&self) -> ScoreMatrix {
        ScoreMatrix {
            scores: self.scores.transpose(),
            direction: self.direction.flipped(),
        }
    }
}

/// `out[i][j] = f(i, j, ⟨a_i, b_j⟩)` over row-major copies, rows in parallel.
pub(crate) fn inner_product_scores(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    f: impl Fn(usize, usize, f64) -> f64 + Sync + Send,
) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols());
    let k = a.ncols();
    let (n, m) = (a.nrows(), b.nrows());
    let ar = a.transpose();
    let br = b.transpose();
    let (ar, br) = (ar.as_slice(), br.as_slice());
    let mut out = vec![0.0; n * m];
    exec::for_each_chunk_mut(&mut out, m, |i, row| {
        let ai = &ar[i * k..(i + 1) * k];
        for (j, slot) in row.iter_mut().enumerate() {
            let bj = &br[j * k..(j + 1) * k];
            let dot: f64 = ai.iter().zip(bj).map(|(x, y)| x * y).sum();
            *slot = f(i, j, dot);
        }
    });
    DMatrix::from_row_slice(n, m, &out)
}

/// `scores[i][j] = −‖C φ_src(i) − φ_tgt(j)‖²`, through the expansion
/// `−(‖a_i‖² + ‖b_j‖² − 2 a_iᵀ b_j)`.
pub fn spectral_scores(
    c: &FunctionalMap,
    src: &SpectralBasis,
    tgt: &SpectralBasis,
) -> Result<ScoreMatrix> {
    let (ks, kt) = (c.source_dim(), c.target_dim());
    if ks > src.dim() || kt > tgt.dim() {
        return Err(Error::InvalidInput(format!(
            "map is {kt}x{ks} but bases have {} (target) and {} (source) vectors",
            tgt.dim(),
            src.dim()
        )));
    }
    let a = src.vectors().columns(0, ks) * c.matrix().transpose();
    let b = tgt.vectors().columns(0, kt).into_owned();
    let na: Vec<f64> = a.row_iter().map(|r| r.norm_squared()).collect();
    let nb: Vec<f64> = b.row_iter().map(|r| r.norm_squared()).collect();
    let scores = inner_product_scores(&a, &b, |i, j, dot| -(na[i] + nb[j] - 2.0 * dot));
    ScoreMatrix::new(scores, Direction::I2t)
}

/// Zero-based rank of the true target for each query: targets scoring
/// strictly higher, plus equal-scoring targets with a lower index.
pub fn true_match_ranks(scores: &ScoreMatrix) -> Result<Vec<usize>> {
    let s = scores.scores();
    if !s.is_square() {
        return Err(Error::ShapeMismatch {
            expected: "square score matrix (row-order ground truth)".into(),
            found: format!("{}x{}", s.nrows(), s.ncols()),
        });
    }
    Ok(exec::map_range(s.nrows(), |i| {
        let truth = s[(i, i)];
        s.row(i)
            .iter()
            .enumerate()
            .filter(|&(j, &v)| v > truth || (v == truth && j < i))
            .count()
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallEntry {
    pub direction: Direction,
    pub k: usize,
    pub recall: f64,
}

/// Recall percentages per (direction, K).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallTable {
    pub protocol: Protocol,
    pub n_queries: usize,
    pub entries: Vec<RecallEntry>,
}

impl RecallTable {
    pub fn get(&self, direction: Direction, k: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.direction == direction && e.k == k)
            .map(|e| e.recall)
    }

    /// Appends the other table's entries; both must share a protocol.
    pub fn merge(mut self, other: RecallTable) -> Result<RecallTable> {
        if self.protocol != other.protocol {
            return Err(Error::InvalidInput(
                "cannot merge recall tables of different protocols".into(),
            ));
        }
        self.entries.extend(other.entries);
        self.entries.sort_by_key(|e| (e.direction, e.k));
        self.entries.dedup_by_key(|e| (e.direction, e.k));
        Ok(self)
    }

    /// Caption-space tables must report identical i2t R@1 and R@5 when every
    /// image has five captions; `None` if either cutoff is absent.
    pub fn caption_identity_holds(&self) -> Option<bool> {
        if self.protocol != Protocol::CaptionSpace {
            return None;
        }
        Some(self.get(Direction::I2t, 1)? == self.get(Direction::I2t, 5)?)
    }
}

/// Image-space Recall@K for the direction of `scores`.
pub fn recall_at_k(scores: &ScoreMatrix, ks: &[usize]) -> Result<RecallTable> {
    let n = scores.n_targets();
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > n) {
        return Err(Error::CutoffTooLarge { k, n });
    }
    let ranks = true_match_ranks(scores)?;
    let q = ranks.len();
    let mut entries: Vec<RecallEntry> = ks
        .iter()
        .map(|&k| RecallEntry {
            direction: scores.direction(),
            k,
            recall: 100.0 * ranks.iter().filter(|&&r| r < k).count() as f64 / q as f64,
        })
        .collect();
    entries.sort_by_key(|e| e.k);
    entries.dedup_by_key(|e| e.k);
    Ok(RecallTable {
        protocol: Protocol::ImageSpace,
        n_queries: q,
        entries,
    })
}

/// Image-space recall in both directions; the reverse direction scores the
/// transposed matrix.
pub fn recall_both(scores: &ScoreMatrix, ks: &[usize]) -> Result<RecallTable> {
    recall_at_k(scores, ks)?.merge(recall_at_k(&scores.transposed(), ks)?)
}

/// The image-space cutoffs needed to report caption-space `ks`.
pub fn required_image_cutoffs(ks: &[usize], captions_per_image: usize) -> Vec<usize> {
    let mut all: Vec<usize> = ks
        .iter()
        .flat_map(|&k| [k, k.div_ceil(captions_per_image)])
        .collect();
    all.sort_unstable();
    all.dedup();
    all
}

/// With `c` captions per image, i2t caption-space R@K equals image-space
/// R@⌈K/c⌉; t2i (mean-caption queries) is unchanged.
pub fn caption_space_recall(
    image: &RecallTable,
    captions_per_image: usize,
    ks: &[usize],
) -> Result<RecallTable> {
    if image.protocol != Protocol::ImageSpace {
        return Err(Error::InvalidInput(
            "caption-space recall needs an image-space table".into(),
        ));
    }
    if captions_per_image == 0 {
        return Err(Error::InvalidInput(
            "captions_per_image must be positive".into(),
        ));
    }
    let mut entries = Vec::new();
    for direction in [Direction::I2t, Direction::T2i] {
        for &k in ks {
            let source_k = match direction {
                Direction::I2t => k.div_ceil(captions_per_image),
                Direction::T2i => k,
            };
            let recall = image.get(direction, source_k).ok_or(Error::MissingCutoff {
                k: source_k,
                direction: direction.to_string(),
            })?;
            entries.push(RecallEntry {
                direction,
                k,
                recall,
            });
        }
    }
    entries.sort_by_key(|e| (e.direction, e.k));
    entries.dedup_by_key(|e| (e.direction, e.k));
    Ok(RecallTable {
        protocol: Protocol::CaptionSpace,
        n_queries: image.n_queries,
        entries,
    })
}

/// Both protocols for an i2t score matrix: `(image_space, caption_space)`.
pub fn evaluate(
    scores: &ScoreMatrix,
    ks: &[usize],
    captions_per_image: usize,
) -> Result<(RecallTable, RecallTable)> {
    let image = recall_both(scores, &required_image_cutoffs(ks, captions_per_image))?;
    let caption = caption_space_recall(&image, captions_per_image, ks)?;
    if caption.caption_identity_holds() == Some(false) && captions_per_image == 5 {
        return Err(Error::InvalidInput(
            "caption-space i2t R@1 and R@5 differ; the protocol mapping is broken".into(),
        ));
    }
    Ok((image, caption))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sm(m: DMatrix<f64>) -> ScoreMatrix {
        ScoreMatrix::new(m, Direction::I2t).unwrap()
    }

    #[test]
    fn identity_scores_are_perfect() {
        let t = recall_both(&sm(DMatrix::identity(6, 6)), &[1, 6]).unwrap();
        assert_eq!(t.get(Direction::I2t, 1), Some(100.0));
        assert_eq!(t.get(Direction::T2i, 1), Some(100.0));
    }

    #[test]
    fn adversarial_matrix_ranks_truth_last() {
        let n = 7;
        let m = DMatrix::from_fn(n, n, |i, j| if i == j { -1.0 } else { (i + j) as f64 });
        let ranks = true_match_ranks(&sm(m.clone())).unwrap();
        assert!(ranks.iter().all(|&r| r == n - 1));
        let t = recall_at_k(&sm(m), &[1, 3, 6, 7]).unwrap();
        assert_eq!(t.get(Direction::I2t, 6), Some(0.0));
        assert_eq!(t.get(Direction::I2t, 7), Some(100.0));
    }

    #[test]
    fn ties_go_to_lower_index() {
        let m = DMatrix::from_element(3, 3, 1.0);
        assert_eq!(true_match_ranks(&sm(m)).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn cutoff_validation() {
        assert!(matches!(
            recall_at_k(&sm(DMatrix::identity(3, 3)), &[4]),
            Err(Error::CutoffTooLarge { k: 4, n: 3 })
        ));
    }

    #[test]
    fn caption_space_mapping() {
        let image = RecallTable {
            protocol: Protocol::ImageSpace,
            n_queries: 10,
            entries: vec![
                RecallEntry {
                    direction: Direction::I2t,
                    k: 1,
                    recall: 10.0,
                },
                RecallEntry {
                    direction: Direction::I2t,
                    k: 2,
                    recall: 20.0,
                },
                RecallEntry {
                    direction: Direction::T2i,
                    k: 1,
                    recall: 30.0,
                },
                RecallEntry {
                    direction: Direction::T2i,
                    k: 5,
                    recall: 40.0,
                },
                RecallEntry {
                    direction: Direction::T2i,
                    k: 10,
                    recall: 50.0,
                },
            ],
        };
        let cap = caption_space_recall(&image, 5, &[1, 5, 10]).unwrap();
        assert_eq!(cap.get(Direction::I2t, 1), Some(10.0));
        assert_eq!(cap.get(Direction::I2t, 5), Some(10.0));
        assert_eq!(cap.get(Direction::I2t, 10), Some(20.0));
        assert_eq!(cap.get(Direction::T2i, 10), Some(50.0));
        assert_eq!(cap.caption_identity_holds(), Some(true));
        assert!(matches!(
            caption_space_recall(&image, 1, &[5]),
            Err(Error::MissingCutoff { k: 5, .. })
        ));
    }

    #[test]
    fn single_caption_is_identity() {
        let t = recall_both(
            &sm(DMatrix::from_fn(5, 5, |i, j| {
                -((i as f64) - (j as f64) * 0.7).abs()
            })),
            &[1, 2, 5],
        )
        .unwrap();
        let cap = caption_space_recall(&t, 1, &[1, 2, 5]).unwrap();
        assert_eq!(cap.entries, t.entries);
    }

    #[test]
    fn required_cutoffs_include_ceilings() {
        assert_eq!(required_image_cutoffs(&[1, 5, 10], 5), vec![1, 2, 5, 10]);
    }
}
