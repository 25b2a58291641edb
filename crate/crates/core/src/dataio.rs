//! Embedding matrices, anchor sets, pipeline configuration and report files.
//!
//! Binary embedding files are `"EMB1"`, then `u32 N`, `u32 d` and `N·d` `f32`
//! values, all little-endian and row-major. Values are widened to `f64` on
//! load; every computation downstream is double precision.

use std::collections::HashSet;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";
const HEADER_LEN: usize = 12;

/// `N × d` encoder outputs for one modality. Row `i` of every modality refers
/// to the same underlying sample.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    data: DMatrix<f64>,
    modality: String,
}

impl EmbeddingMatrix {
    pub fn new(data: DMatrix<f64>, modality: impl Into<String>) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(Error::InvalidInput(format!(
                "an embedding matrix needs at least 2 rows, got {}",
                data.nrows()
            )));
        }
        if data.ncols() == 0 {
            return Err(Error::InvalidInput("embedding dimension is zero".into()));
        }
        check_finite(&data)?;
        Ok(EmbeddingMatrix {
            data,
            modality: modality.into(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], modality: impl Into<String>) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(Error::ShapeMismatch {
                expected: format!("{d} columns"),
                found: format!("{} columns in row {i}", r.len()),
            });
        }
        Self::new(DMatrix::from_fn(n, d, |i, j| rows[i][j]), modality)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn n_points(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn modality(&self) -> &str {
        &self.modality
    }

    pub fn with_modality(mut self, modality: impl Into<String>) -> Self {
        self.modality = modality.into();
        self
    }

    /// Row-major copy of the data, `n_points · dim` long.
    pub fn row_major(&self) -> Vec<f64> {
        self.data.transpose().as_slice().to_vec()
    }

    /// Keeps the first `d` coordinates.
    pub fn truncated(&self, d: usize) -> Result<Self> {
        if d == 0 || d > self.dim() {
            return Err(Error::InvalidInput(format!(
                "cannot truncate {}-dimensional embeddings to {d}",
                self.dim()
            )));
        }
        Ok(EmbeddingMatrix {
            data: self.data.columns(0, d).into_owned(),
            modality: self.modality.clone(),
        })
    }
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Binary,
    Csv,
}

impl EmbeddingFormat {
    /// `.csv` and `.txt` are CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") || ext.eq_ignore_ascii_case("txt") => {
                EmbeddingFormat::Csv
            }
            _ => EmbeddingFormat::Binary,
        }
    }
}

/// Encodes any matrix in the binary interchange format.
pub fn encode_matrix(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&(m[(i, j)] as f32).to_le_bytes());
        }
    }
    out
}

/// Decodes the binary interchange format without embedding-specific checks.
pub fn decode_matrix(bytes: &[u8]) -> Result<DMatrix<f64>> {
    if bytes.is_empty() {
        return Err(Error::Empty);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::ShapeMismatch {
            expected: format!("at least {HEADER_LEN} header bytes"),
            found: format!("{} bytes", bytes.len()),
        });
    }
    if &bytes[..4] != EMBEDDING_MAGIC {
        return Err(Error::Malformed {
            line: 0,
            message: "missing EMB1 magic bytes".into(),
        });
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::InvalidInput(format!("header shape {n}x{d} overflows")))?;
    if payload.len() != expected {
        return Err(Error::ShapeMismatch {
            expected: format!("{n}x{d} = {} f32 values", n * d),
            found: format!("{} payload bytes", payload.len()),
        });
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(DMatrix::from_row_slice(n, d, &values))
}

pub fn read_matrix_binary(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes)
}

pub fn write_matrix_binary(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_matrix(m))
}

/// Parses `d` comma-separated values per line, `N` lines, no header.
pub fn parse_embedding_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Malformed {
            line: line + 1,
            message: e.to_string(),
        })?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|e| Error::Malformed {
                    line: line + 1,
                    message: format!("{field:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} values per line", first.len()),
                    found: format!("{} values on line {}", row.len(), line + 1),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Empty);
    }
    let d = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

pub fn load_embeddings(path: &Path, format: EmbeddingFormat) -> Result<EmbeddingMatrix> {
    let data = match format {
        EmbeddingFormat::Binary => read_matrix_binary(path)?,
        EmbeddingFormat::Csv => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_embedding_csv(&text)?
        }
    };
    let modality = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_owned();
    EmbeddingMatrix::new(data, modality)
}

pub fn write_embeddings(z: &EmbeddingMatrix, path: &Path, format: EmbeddingFormat) -> Result<()> {
    match format {
        EmbeddingFormat::Binary => write_matrix_binary(z.data(), path),
        EmbeddingFormat::Csv => {
            let mut out = String::new();
            for i in 0..z.n_points() {
                let line: Vec<String> = (0..z.dim())
                    .map(|j| format!("{:e}", z.data[(i, j)]))
                    .collect();
                out.push_str(&line.join(","));
                out.push('\n');
            }
            write_atomic(path, out.as_bytes())
        }
    }
}

/// Known cross-modal correspondences `(source_index, target_index)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorSet {
    pairs: Vec<(usize, usize)>,
    seed: Option<u64>,
}

impl AnchorSet {
    pub fn new(pairs: Vec<(usize, usize)>, n_source: usize, n_target: usize) -> Result<Self> {
        let mut seen_src = HashSet::with_capacity(pairs.len());
        let mut seen_tgt = HashSet::with_capacity(pairs.len());
        for &(s, t) in &pairs {
            if s >= n_source {
                return Err(Error::AnchorOutOfRange {
                    index: s,
                    n: n_source,
                });
            }
            if t >= n_target {
                return Err(Error::AnchorOutOfRange {
                    index: t,
                    n: n_target,
                });
            }
            if !seen_src.insert(s) {
                return Err(Error::DuplicateAnchor {
                    side: "source",
                    index: s,
                });
            }
            if !seen_tgt.insert(t) {
                return Err(Error::DuplicateAnchor {
                    side: "target",
                    index: t,
                });
            }
        }
        Ok(AnchorSet { pairs, seed: None })
    }

    pub fn empty() -> Self {
        AnchorSet {
            pairs: Vec::new(),
            seed: None,
        }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn budget(&self) -> usize {
        self.pairs.len()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn source_indices(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn target_indices(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }
}

/// Uniformly random anchors `(i, i)`; a pure function of its arguments.
pub fn sample_anchors(n_points: usize, budget: usize, seed: u64) -> Result<AnchorSet> {
    if budget > n_points {
        return Err(Error::BudgetTooLarge {
            budget,
            n: n_points,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = rand::seq::index::sample(&mut rng, n_points, budget)
        .into_iter()
        .map(|i| (i, i))
        .collect();
    Ok(AnchorSet {
        pairs,
        seed: Some(seed),
    })
}

pub fn parse_anchor_csv(text: &str, n_source: usize, n_target: usize) -> Result<AnchorSet> {
    let mut pairs = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Malformed {
            line: line_no + 1,
            message,
        };
        let mut fields = line.split(',').map(str::trim);
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(malformed(format!("expected \"src,dst\", got {line:?}")));
        };
        let parse = |f: &str| {
            f.parse::<usize>()
                .map_err(|e| malformed(format!("{f:?}: {e}")))
        };
        pairs.push((parse(a)?, parse(b)?));
    }
    AnchorSet::new(pairs, n_source, n_target)
}

pub fn load_anchor_set(path: &Path, n_points: usize) -> Result<AnchorSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_anchor_csv(&text, n_points, n_points)
}

pub fn write_anchor_set(anchors: &AnchorSet, path: &Path) -> Result<()> {
    let text: String = anchors
        .pairs
        .iter()
        .map(|(s, t)| format!("{s},{t}\n"))
        .collect();
    write_atomic(path, text.as_bytes())
}

/// Hyperparameters shared by every stage of the pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub knn_k: usize,
    pub spectral_dim: usize,
    pub zoomout_start: usize,
    pub zoomout_max: usize,
    pub zoomout_steps: usize,
    pub lambda_comm: f64,
    pub lambda_tik: f64,
    pub probe_smoothing: f64,
    pub hks_num_scales: usize,
    pub recall_cutoffs: Vec<usize>,
    pub captions_per_image: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            knn_k: 15,
            spectral_dim: 50,
            zoomout_start: 50,
            zoomout_max: 100,
            zoomout_steps: 5,
            lambda_comm: 0.1,
            lambda_tik: 0.001,
            probe_smoothing: 0.1,
            hks_num_scales: 100,
            recall_cutoffs: vec![1, 5, 10],
            captions_per_image: 5,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Checks the configuration against a dataset of `n_points` rows.
    pub fn validate(&self, n_points: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.knn_k == 0 {
            return bad("knn_k must be at least 1".into());
        }
        if self.spectral_dim == 0 || self.spectral_dim + 1 >= n_points {
            return bad(format!(
                "spectral_dim must satisfy 1 <= k_s < N - 1 (k_s = {}, N = {n_points})",
                self.spectral_dim
            ));
        }
        if self.zoomout_start > self.zoomout_max || self.zoomout_max + 1 > n_points {
            return bad(format!(
                "zoomout range must satisfy k_0 <= k_max <= N - 1 (k_0 = {}, k_max = {}, N = {n_points})",
                self.zoomout_start, self.zoomout_max
            ));
        }
        for (name, v) in [
            ("lambda_comm", self.lambda_comm),
            ("lambda_tik", self.lambda_tik),
            ("probe_smoothing", self.probe_smoothing),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!(
                    "{name} must be a finite nonnegative number, got {v}"
                ));
            }
        }
        if self.recall_cutoffs.contains(&0) {
            return bad("recall cutoffs must be positive".into());
        }
        if self.captions_per_image == 0 {
            return bad("captions_per_image must be positive".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("config is always serializable");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// JSON formatter that writes every real with 17 significant digits.
struct PreciseFormatter<'a> {
    pretty: serde_json::ser::PrettyFormatter<'a>,
}

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*)),* $(,)?) => {
        $(
            fn $name<W: ?Sized + Write>(&mut self, writer: &mut W $(, $arg: $ty)*) -> io::Result<()> {
                self.pretty.$name(writer $(, $arg)*)
            }
        )*
    };
}

impl serde_json::ser::Formatter for PreciseFormatter<'_> {
    delegate!(
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        begin_object_value(),
        end_object_value(),
    );

    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Pretty JSON with full-precision reals.
pub fn to_json_precise<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let formatter = PreciseFormatter {
        pretty: serde_json::ser::PrettyFormatter::with_indent(b"  "),
    };
    let mut ser = serde_json::Serializer::with_formatter(&mut out, formatter);
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(out)
}

/// Writes `report` as JSON, atomically.
pub fn write_report<T: Serialize + ?Sized>(report: &T, path: &Path) -> Result<()> {
    write_atomic(path, &to_json_precise(report)?)
}

pub fn read_report<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&text)?)
}

/// Writes to a sibling temporary file and renames it over `path`, so a failed
/// write never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    let result = fs::write(&tmp, bytes).and_then(|()| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_shape_round_trip() {
        let m = DMatrix::from_fn(1000, 768, |i, j| {
            ((i * 31 + j * 7) % 97) as f64 * 0.25 - 12.0
        });
        let bytes = encode_matrix(&m);
        assert_eq!(bytes.len(), 12 + 4 * 1000 * 768);
        let back = decode_matrix(&bytes).unwrap();
        assert_eq!(back.shape(), (1000, 768));
        assert_eq!(back, m);
    }

    #[test]
    fn short_payload_is_shape_mismatch() {
        let m = DMatrix::from_element(3, 4, 1.5);
        let mut bytes = encode_matrix(&m);
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(
            decode_matrix(&bytes),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn bad_magic_and_empty_are_rejected() {
        assert!(matches!(decode_matrix(&[]), Err(Error::Empty)));
        let mut bytes = encode_matrix(&DMatrix::from_element(2, 2, 0.0));
        bytes[0] = b'X';
        assert!(matches!(
            decode_matrix(&bytes),
            Err(Error::Malformed { .. })
        ));
    }

    #[test]
    fn csv_identity() {
        let m = parse_embedding_csv("1,0\n0,1\n").unwrap();
        assert_eq!(m, DMatrix::identity(2, 2));
    }

    #[test]
    fn csv_ragged_and_garbage() {
        assert!(matches!(
            parse_embedding_csv("1,0\n0\n"),
            Err(Error::Malformed { .. } | Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            parse_embedding_csv("1,abc\n"),
            Err(Error::Malformed { line: 1, .. })
        ));
        assert!(matches!(parse_embedding_csv(""), Err(Error::Empty)));
    }

    #[test]
    fn non_finite_reports_position() {
        let mut m = DMatrix::from_element(3, 3, 1.0);
        m[(2, 1)] = f64::NAN;
        m[(1, 2)] = f64::INFINITY;
        assert!(matches!(
            EmbeddingMatrix::new(m, "v"),
            Err(Error::NonFinite { row: 1, col: 2 })
        ));
    }

    #[test]
    fn embedding_shape_constraints() {
        assert!(EmbeddingMatrix::new(DMatrix::from_element(1, 3, 0.0), "v").is_err());
        assert!(EmbeddingMatrix::new(DMatrix::zeros(3, 0), "v").is_err());
        let z =
            EmbeddingMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]], "v").unwrap();
        assert_eq!(z.row_major(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(z.truncated(2).unwrap().dim(), 2);
        assert!(z.truncated(4).is_err());
    }

    #[test]
    fn exhaustive_anchor_budget_covers_everything() {
        let a = sample_anchors(1000, 1000, 3).unwrap();
        let mut src = a.source_indices();
        src.sort_unstable();
        assert_eq!(src, (0..1000).collect::<Vec<_>>());
        assert!(a.pairs().iter().all(|(s, t)| s == t));
    }

    #[test]
    fn anchor_sampling_is_deterministic() {
        assert_eq!(
            sample_anchors(1000, 100, 7).unwrap(),
            sample_anchors(1000, 100, 7).unwrap()
        );
        assert_ne!(
            sample_anchors(1000, 100, 7).unwrap(),
            sample_anchors(1000, 100, 8).unwrap()
        );
        assert!(matches!(
            sample_anchors(10, 20, 0),
            Err(Error::BudgetTooLarge { .. })
        ));
    }

    #[test]
    fn anchor_csv_validation() {
        assert_eq!(parse_anchor_csv("0,0\n5,5\n", 10, 10).unwrap().budget(), 2);
        assert!(matches!(
            parse_anchor_csv("0,0\n0,3\n", 10, 10),
            Err(Error::DuplicateAnchor {
                side: "source",
                index: 0
            })
        ));
        assert!(matches!(
            parse_anchor_csv("1,3\n2,3\n", 10, 10),
            Err(Error::DuplicateAnchor {
                side: "target",
                index: 3
            })
        ));
        assert!(matches!(
            parse_anchor_csv("0,99\n", 10, 10),
            Err(Error::AnchorOutOfRange { index: 99, n: 10 })
        ));
        assert!(matches!(
            parse_anchor_csv("0;1\n", 10, 10),
            Err(Error::Malformed { line: 1, .. })
        ));
        assert!(matches!(
            parse_anchor_csv("0,1,2\n", 10, 10),
            Err(Error::Malformed { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let c = PipelineConfig::default();
        assert!(c.validate(1000).is_ok());
        assert!(c.validate(51).is_err());
        let mut c2 = c.clone();
        c2.lambda_comm = -1.0;
        assert!(c2.validate(1000).is_err());
        let mut c3 = c.clone();
        c3.knn_k = 0;
        assert!(c3.validate(1000).is_err());
        let mut c4 = c;
        c4.zoomout_start = 120;
        assert!(c4.validate(1000).is_err());
    }

    #[test]
    fn precise_json_keeps_every_bit() {
        let values = vec![0.1, 1.0 / 3.0, -2.5e-300, 12345.678901234567];
        let bytes = to_json_precise(&values).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains("1.0000000000000001e-1"), "{text}");
        let back: Vec<f64> = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(back, values);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let err = write_report(&1.0, Path::new("/nonexistent-dir/x/report.json")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
