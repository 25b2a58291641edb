//! End-to-end experiments over a pair (or chain) of embedding matrices, and
//! the run-directory layout they are written to.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::baselines::{
    cca_default_components, fit_cca, fit_procrustes, raw_cosine_scores, relative_scores,
    ProcrustesOptions, CCA_DEFAULT_RIDGE, CCA_MIN_ANCHORS,
};
use crate::dataio::{
    sample_anchors, write_atomic, write_report, AnchorSet, EmbeddingMatrix, PipelineConfig,
};
use crate::diagnostics::{diagnose, spectral_distance, spectrum_csv, DiagnosticsReport};
use crate::error::StageExt;
use crate::fmap::{
    compose as compose_maps, solve_fmap, solve_fmap_unsupervised, zoomout, FunctionalMap,
    ProbeCoeffs,
};
use crate::graph::{knn_graph, normalized_laplacian};
use crate::retrieval::{
    evaluate, spectral_scores, Direction, Protocol, RecallEntry, RecallTable, ScoreMatrix,
};
use crate::spectral::{hks, hks_scales, spectral_basis, SpectralBasis};
use crate::{Error, Result};

/// A modality's graph summary and eigenbasis.
#[derive(Clone, Debug)]
pub struct Modality {
    pub basis: SpectralBasis,
    pub sigma: f64,
    pub components: usize,
}

/// kNN graph, Laplacian and the first `k` non-trivial eigenpairs of `z`.
pub fn build_modality(z: &EmbeddingMatrix, knn_k: usize, k: usize) -> Result<Modality> {
    let graph = knn_graph(z, knn_k).stage("knn graph")?;
    let laplacian = normalized_laplacian(&graph).stage("laplacian")?;
    let basis = spectral_basis(&laplacian, k).stage("spectral basis")?;
    Ok(Modality {
        basis,
        sigma: graph.sigma(),
        components: graph.connected_components(),
    })
}

fn same_rows(zv: &EmbeddingMatrix, zt: &EmbeddingMatrix) -> Result<usize> {
    if zv.n_points() != zt.n_points() {
        return Err(Error::DimensionMismatch {
            context: "paired embedding rows",
            expected: zv.n_points(),
            found: zt.n_points(),
        })
        .stage("input");
    }
    Ok(zv.n_points())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectraReport {
    pub spectral_dim: usize,
    pub values_source: Vec<f64>,
    pub values_target: Vec<f64>,
    pub spectral_distance: f64,
    pub eigenvalue_range_source: (f64, f64),
    pub eigenvalue_range_target: (f64, f64),
    pub sigma_source: f64,
    pub sigma_target: f64,
    pub components_source: usize,
    pub components_target: usize,
}

/// Eigenvalue spectra of both modalities side by side.
pub fn spectra(
    zv: &EmbeddingMatrix,
    zt: &EmbeddingMatrix,
    config: &PipelineConfig,
) -> Result<(SpectraReport, Modality, Modality)> {
    let n = zv.n_points().min(zt.n_points());
    config.validate(n).stage("config")?;
    let k = config.spectral_dim;
    let v = build_modality(zv, config.knn_k, k).stage("source")?;
    let t = build_modality(zt, config.knn_k, k).stage("target")?;
    let ls = v.basis.values().as_slice().to_vec();
    let lt = t.basis.values().as_slice().to_vec();
    let report = SpectraReport {
        spectral_dim: k,
        spectral_distance: spectral_distance(&ls, &lt).stage("diagnostics")?,
        eigenvalue_range_source: (ls[0], ls[k - 1]),
        eigenvalue_range_target: (lt[0], lt[k - 1]),
        values_source: ls,
        values_target: lt,
        sigma_source: v.sigma,
        sigma_target: t.sigma,
        components_source: v.components,
        components_target: t.components,
    };
    Ok((report, v, t))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fmap,
    FmapHks,
    RawCosine,
    Procrustes,
    Relative,
    Cca,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Fmap,
        Method::FmapHks,
        Method::RawCosine,
        Method::Procrustes,
        Method::Relative,
        Method::Cca,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fmap => "fmap",
            Method::FmapHks => "fmap_hks",
            Method::RawCosine => "raw_cosine",
            Method::Procrustes => "procrustes",
            Method::Relative => "relative",
            Method::Cca => "cca",
        }
    }

    /// Whether the method consumes anchors.
    pub fn supervised(self) -> bool {
        !matches!(self, Method::FmapHks | Method::RawCosine)
    }

    pub fn spectral(self) -> bool {
        matches!(self, Method::Fmap | Method::FmapHks)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.replace('-', "_"))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

/// One alignment experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignSpec {
    pub method: Method,
    pub budgets: Vec<usize>,
    pub zoomout: bool,
    pub procrustes: ProcrustesOptions,
    pub cca_ridge: f64,
    /// Defaults to `min(|S| − 1, d_v, d_t)`.
    pub cca_components: Option<usize>,
}

impl Default for AlignSpec {
    fn default() -> Self {
        AlignSpec {
            method: Method::Fmap,
            budgets: vec![5, 10, 20, 50, 100, 500],
            zoomout: true,
            procrustes: ProcrustesOptions::default(),
            cca_ridge: CCA_DEFAULT_RIDGE,
            cca_components: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignCell {
    pub method: Method,
    pub budget: usize,
    pub spectral_dim: Option<usize>,
    pub image_space: RecallTable,
    pub caption_space: RecallTable,
    /// Diagnostics of the solved map, before any refinement.
    pub diagnostics: Option<DiagnosticsReport>,
    /// Diagnostics of the ZoomOut output, when refinement ran.
    pub refined_diagnostics: Option<DiagnosticsReport>,
    #[serde(skip)]
    pub map: Option<FunctionalMap>,
    #[serde(skip)]
    pub anchors: Option<AnchorSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub method: Method,
    pub budget: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlignReport {
    pub spec: AlignSpec,
    pub cells: Vec<AlignCell>,
    pub skipped: Vec<Skipped>,
    pub spectra: Option<SpectraReport>,
}

/// The initial and final map of a spectral fit.
struct SpectralFit {
    solved: FunctionalMap,
    refined: Option<FunctionalMap>,
}

impl SpectralFit {
    fn final_map(&self) -> &FunctionalMap {
        self.refined.as_ref().unwrap_or(&self.solved)
    }
}

fn check_zoomout(config: &PipelineConfig) -> Result<()> {
    if config.zoomout_start != config.spectral_dim {
        return Err(Error::InvalidConfig(format!(
            "ZoomOut starts from the solved map, so its start ({}) must equal the spectral dimension ({})",
            config.zoomout_start, config.spectral_dim
        )));
    }
    Ok(())
}

/// Basis size needed by a spectral run.
fn basis_dim(config: &PipelineConfig, zoom: bool) -> usize {
    if zoom {
        config.spectral_dim.max(config.zoomout_max)
    } else {
        config.spectral_dim
    }
}

fn fit_anchor_map(
    v: &SpectralBasis,
    t: &SpectralBasis,
    anchors: &AnchorSet,
    config: &PipelineConfig,
    zoom: bool,
) -> Result<SpectralFit> {
    let k = config.spectral_dim;
    let (vk, tk) = (v.truncated(k)?, t.truncated(k)?);
    let probes =
        ProbeCoeffs::from_anchors(&vk, &tk, anchors, config.probe_smoothing).stage("probes")?;
    let solved = solve_fmap(
        &probes,
        vk.values().as_slice(),
        tk.values().as_slice(),
        config.lambda_comm,
        config.lambda_tik,
    )
    .stage("functional map solve")?;
    refine(solved, v, t, config, zoom)
}

fn fit_hks_map(
    v: &SpectralBasis,
    t: &SpectralBasis,
    config: &PipelineConfig,
    zoom: bool,
) -> Result<SpectralFit> {
    let k = config.spectral_dim;
    let (vk, tk) = (v.truncated(k)?, t.truncated(k)?);
    // One scale vector for both sides so column q describes the same diffusion time.
    let scales = hks_scales(&vk, config.hks_num_scales).stage("hks scales")?;
    let hv = hks(&vk, &scales).stage("hks")?;
    let ht = hks(&tk, &scales).stage("hks")?;
    let solved = solve_fmap_unsupervised(&hv, &ht, &vk, &tk, config.lambda_comm, config.lambda_tik)
        .stage("functional map solve")?;
    refine(solved, v, t, config, zoom)
}

fn refine(
    solved: FunctionalMap,
    v: &SpectralBasis,
    t: &SpectralBasis,
    config: &PipelineConfig,
    zoom: bool,
) -> Result<SpectralFit> {
    let refined = if zoom {
        Some(zoomout(&solved, v, t, config.zoomout_max, config.zoomout_steps).stage("zoomout")?)
    } else {
        None
    };
    Ok(SpectralFit { solved, refined })
}

fn recall_tables(
    scores: &ScoreMatrix,
    config: &PipelineConfig,
) -> Result<(RecallTable, RecallTable)> {
    evaluate(scores, &config.recall_cutoffs, config.captions_per_image).stage("recall")
}

/// Runs one method over every anchor budget.
pub fn align(
    zv: &EmbeddingMatrix,
    zt: &EmbeddingMatrix,
    spec: &AlignSpec,
    config: &PipelineConfig,
) -> Result<AlignReport> {
    let n = same_rows(zv, zt)?;
    config.validate(n).stage("config")?;
    let method = spec.method;
    let zoom = spec.zoomout && method.spectral();
    if zoom {
        check_zoomout(config).stage("config")?;
    }

    let (bases, spectra_report) = if method.spectral() {
        let k = basis_dim(config, zoom);
        let v = build_modality(zv, config.knn_k, k).stage("source")?;
        let t = build_modality(zt, config.knn_k, k).stage("target")?;
        let ks = config.spectral_dim;
        let ls = v.basis.values().as_slice()[..ks].to_vec();
        let lt = t.basis.values().as_slice()[..ks].to_vec();
        let report = SpectraReport {
            spectral_dim: ks,
            spectral_distance: spectral_distance(&ls, &lt).stage("diagnostics")?,
            eigenvalue_range_source: (ls[0], ls[ks - 1]),
            eigenvalue_range_target: (lt[0], lt[ks - 1]),
            values_source: ls,
            values_target: lt,
            sigma_source: v.sigma,
            sigma_target: t.sigma,
            components_source: v.components,
            components_target: t.components,
        };
        (Some((v.basis, t.basis)), Some(report))
    } else {
        (None, None)
    };

    let budgets: Vec<usize> = if method.supervised() {
        spec.budgets.clone()
    } else {
        vec![0]
    };
    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    for &budget in &budgets {
        if method == Method::Cca && budget < CCA_MIN_ANCHORS {
            let reason = format!("CCA needs at least {CCA_MIN_ANCHORS} anchors");
            log::info!("skipping cca at |S| = {budget}: {reason}");
            skipped.push(Skipped {
                method,
                budget,
                reason,
            });
            continue;
        }
        let anchors = if method.supervised() {
            Some(sample_anchors(n, budget, config.seed).stage("anchors")?)
        } else {
            None
        };
        let cell = run_cell(zv, zt, spec, config, bases.as_ref(), anchors, zoom).map_err(|e| {
            Error::Stage {
                stage: "align",
                source: Box::new(e),
            }
        })?;
        cells.push(cell);
    }
    Ok(AlignReport {
        spec: spec.clone(),
        cells,
        skipped,
        spectra: spectra_report,
    })
}

fn run_cell(
    zv: &EmbeddingMatrix,
    zt: &EmbeddingMatrix,
    spec: &AlignSpec,
    config: &PipelineConfig,
    bases: Option<&(SpectralBasis, SpectralBasis)>,
    anchors: Option<AnchorSet>,
    zoom: bool,
) -> Result<AlignCell> {
    let method = spec.method;
    let budget = anchors.as_ref().map_or(0, |a| a.budget());
    let (scores, diagnostics, refined_diagnostics, map) = match method {
        Method::Fmap | Method::FmapHks => {
            let (v, t) = bases.expect("spectral methods build bases");
            let fit = match &anchors {
                Some(a) => fit_anchor_map(v, t, a, config, zoom)?,
                None => fit_hks_map(v, t, config, zoom)?,
            };
            let diag = diagnose(&fit.solved, v, t).stage("diagnostics")?;
            let refined = match &fit.refined {
                Some(c) => Some(diagnose(c, v, t).stage("diagnostics")?),
                None => None,
            };
            let scores = spectral_scores(fit.final_map(), v, t).stage("scoring")?;
            (scores, Some(diag), refined, Some(fit.final_map().clone()))
        }
        Method::RawCosine => (
            raw_cosine_scores(zv, zt).stage("scoring")?,
            None,
            None,
            None,
        ),
        Method::Procrustes => {
            let a = anchors.as_ref().expect("supervised");
            let fit = fit_procrustes(zv, zt, a, spec.procrustes).stage("procrustes")?;
            (fit.scores(zv, zt).stage("scoring")?, None, None, None)
        }
        Method::Relative => {
            let a = anchors.as_ref().expect("supervised");
            (
                relative_scores(zv, zt, a).stage("scoring")?,
                None,
                None,
                None,
            )
        }
        Method::Cca => {
            let a = anchors.as_ref().expect("supervised");
            let comps = spec
                .cca_components
                .unwrap_or_else(|| cca_default_components(a.budget(), zv.dim(), zt.dim()));
            let fit = fit_cca(zv, zt, a, spec.cca_ridge, comps).stage("cca")?;
            (fit.scores(zv, zt).stage("scoring")?, None, None, None)
        }
    };
    let (image_space, caption_space) = recall_tables(&scores, config)?;
    Ok(AlignCell {
        method,
        budget,
        spectral_dim: method
            .spectral()
            .then_some(map.as_ref().map_or(0, |m| m.source_dim())),
        image_space,
        caption_space,
        diagnostics,
        refined_diagnostics,
        map,
        anchors,
    })
}

/// Spectral-dimension sweep with ZoomOut off.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblateSpec {
    pub spectral_dims: Vec<usize>,
    pub budget: usize,
}

impl Default for AblateSpec {
    fn default() -> Self {
        AblateSpec {
            spectral_dims: vec![10, 20, 30, 50, 70, 100],
            budget: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblateRow {
    pub spectral_dim: usize,
    pub image_space: RecallTable,
    pub caption_space: RecallTable,
    pub diagnostics: DiagnosticsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblateReport {
    pub spec: AblateSpec,
    pub rows: Vec<AblateRow>,
    /// Whether caption-space i2t R@1 never drops as `k_s` grows. Reported,
    /// not enforced.
    pub i2t_r1_nondecreasing: bool,
}

pub fn ablate_k(
    zv: &EmbeddingMatrix,
    zt: &EmbeddingMatrix,
    spec: &AblateSpec,
    config: &PipelineConfig,
) -> Result<AblateReport> {
    let n = same_rows(zv, zt)?;
    let mut dims = spec.spectral_dims.clone();
    dims.sort_unstable();
    dims.dedup();
    let k_max = *dims
        .last()
        .ok_or_else(|| Error::InvalidConfig("no spectral dimensions to sweep".into()))?;
    for &k in &dims {
        let mut c = config.clone();
        c.spectral_dim = k;
        c.zoomout_start = c.zoomout_start.min(k);
        c.zoomout_max = c.zoomout_max.max(c.zoomout_start).min(n - 1);
        c.validate(n).stage("config")?;
    }
    let v = build_modality(zv, config.knn_k, k_max).stage("source")?;
    let t = build_modality(zt, config.knn_k, k_max).stage("target")?;
    let anchors = sample_anchors(n, spec.budget, config.seed).stage("anchors")?;
    let mut rows = Vec::new();
    for &k in &dims {
        let mut c = config.clone();
        c.spectral_dim = k;
        let fit = fit_anchor_map(&v.basis, &t.basis, &anchors, &c, false).stage("ablate-k")?;
        let scores = spectral_scores(&fit.solved, &v.basis, &t.basis).stage("scoring")?;
        let (image_space, caption_space) = recall_tables(&scores, config)?;
        rows.push(AblateRow {
            spectral_dim: k,
            image_space,
            caption_space,
            diagnostics: diagnose(&fit.solved, &v.basis, &t.basis).stage("diagnostics")?,
        });
    }
    let r1: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.caption_space.get(Direction::I2t, 1))
        .collect();
    Ok(AblateReport {
        spec: spec.clone(),
        i2t_r1_nondecreasing: r1.windows(2).all(|w| w[1] >= w[0]),
        rows,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub budget: usize,
    pub diagnostics: DiagnosticsReport,
    pub spectra: SpectraReport,
    #[serde(skip)]
    pub map: Option<FunctionalMap>,
}

/// Diagnostics of the solved (unrefined) anchor map.
pub fn diagnose_pair(
    zv: &EmbeddingMatrix,
    zt: &EmbeddingMatrix,
    budget: usize,
    config: &PipelineConfig,
) -> Result<DiagnoseReport> {
    let n = same_rows(zv, zt)?;
    let (spectra, v, t) = spectra(zv, zt, config)?;
    let anchors = sample_anchors(n, budget, config.seed).stage("anchors")?;
    let fit = fit_anchor_map(&v.basis, &t.basis, &anchors, config, false)?;
    Ok(DiagnoseReport {
        budget,
        diagnostics: diagnose(&fit.solved, &v.basis, &t.basis).stage("diagnostics")?,
        spectra,
        map: Some(fit.solved),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposeRow {
    pub name: String,
    pub image_space: RecallTable,
    pub caption_space: RecallTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposeReport {
    pub budget: usize,
    pub zoomout: bool,
    pub anchor_seeds: [u64; 3],
    pub rows: Vec<ComposeRow>,
}

/// Expected recall of a uniformly random ranking, `100 K / N`.
pub fn random_recall(n: usize, config: &PipelineConfig) -> (RecallTable, RecallTable) {
    let image = |ks: &[usize]| {
        [Direction::I2t, Direction::T2i]
            .into_iter()
            .flat_map(|direction| {
                ks.iter().map(move |&k| RecallEntry {
                    direction,
                    k,
                    recall: 100.0 * k.min(n) as f64 / n as f64,
                })
            })
            .collect::<Vec<_>>()
    };
    let c = config.captions_per_image;
    let image_table = RecallTable {
        protocol: Protocol::ImageSpace,
        n_queries: n,
        entries: image(&config.recall_cutoffs),
    };
    let caption_entries = [Direction::I2t, Direction::T2i]
        .into_iter()
        .flat_map(|direction| {
            config.recall_cutoffs.iter().map(move |&k| {
                let eff = if direction == Direction::I2t {
                    k.div_ceil(c)
                } else {
                    k
                };
                RecallEntry {
                    direction,
                    k,
                    recall: 100.0 * eff.min(n) as f64 / n as f64,
                }
            })
        })
        .collect();
    let caption_table = RecallTable {
        protocol: Protocol::CaptionSpace,
        n_queries: n,
        entries: caption_entries,
    };
    (image_table, caption_table)
}

/// Fits a→b and b→c on independent anchor draws, composes them, and compares
/// against the direct a→c map.
pub fn compose(
    za: &EmbeddingMatrix,
    zb: &EmbeddingMatrix,
    zc: &EmbeddingMatrix,
    budget: usize,
    zoom: bool,
    config: &PipelineConfig,
) -> Result<ComposeReport> {
    let n = same_rows(za, zb)?;
    same_rows(za, zc)?;
    config.validate(n).stage("config")?;
    if zoom {
        check_zoomout(config).stage("config")?;
    }
    let k = basis_dim(config, zoom);
    let a = build_modality(za, config.knn_k, k).stage("modality a")?;
    let b = build_modality(zb, config.knn_k, k).stage("modality b")?;
    let c = build_modality(zc, config.knn_k, k).stage("modality c")?;
    let seeds = [
        config.seed,
        config.seed.wrapping_add(1),
        config.seed.wrapping_add(2),
    ];
    let anchors: Vec<AnchorSet> = seeds
        .iter()
        .map(|&s| sample_anchors(n, budget, s).stage("anchors"))
        .collect::<Result<_>>()?;
    let ab = fit_anchor_map(&a.basis, &b.basis, &anchors[0], config, zoom).stage("a->b")?;
    let bc = fit_anchor_map(&b.basis, &c.basis, &anchors[1], config, zoom).stage("b->c")?;
    let ac = fit_anchor_map(&a.basis, &c.basis, &anchors[2], config, zoom).stage("a->c")?;
    let composed = compose_maps(ab.final_map(), bc.final_map()).stage("compose")?;

    let mut rows = Vec::new();
    for (name, map) in [("direct", ac.final_map()), ("composed", &composed)] {
        let scores = spectral_scores(map, &a.basis, &c.basis).stage("scoring")?;
        let (image_space, caption_space) = recall_tables(&scores, config)?;
        rows.push(ComposeRow {
            name: name.into(),
            image_space,
            caption_space,
        });
    }
    let (image_space, caption_space) = random_recall(n, config);
    rows.push(ComposeRow {
        name: "random".into(),
        image_space,
        caption_space,
    });
    Ok(ComposeReport {
        budget,
        zoomout: zoom,
        anchor_seeds: seeds,
        rows,
    })
}

/// Writes the standard files of one run into `dir`.
pub struct RunWriter<'a> {
    dir: &'a Path,
    config: &'a PipelineConfig,
}

#[derive(Serialize)]
struct ConfigFile<'a> {
    config: &'a PipelineConfig,
    config_hash: String,
    command: &'a str,
    generated_unix_secs: u64,
}

#[derive(Serialize)]
struct Wrapped<'a, T: Serialize> {
    config: &'a PipelineConfig,
    #[serde(flatten)]
    body: T,
}

/// One line of `recall.csv`.
pub struct RecallRow<'a> {
    pub method: &'a str,
    pub budget: usize,
    pub spectral_dim: Option<usize>,
    pub table: &'a RecallTable,
}

impl<'a> RunWriter<'a> {
    pub fn new(dir: &'a Path, config: &'a PipelineConfig) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(RunWriter { dir, config })
    }

    pub fn dir(&self) -> &Path {
        self.dir
    }

    pub fn config(&self, command: &str) -> Result<()> {
        let generated_unix_secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        write_report(
            &ConfigFile {
                config: self.config,
                config_hash: self.config.hash(),
                command,
                generated_unix_secs,
            },
            &self.dir.join("config.json"),
        )
    }

    /// `{"config": ..., "<key>": body}` as `<name>`.
    pub fn json<T: Serialize>(&self, name: &str, key: &str, body: &T) -> Result<()> {
        let mut map = serde_json::Map::new();
        map.insert(key.to_owned(), serde_json::to_value(body)?);
        write_report(
            &Wrapped {
                config: self.config,
                body: map,
            },
            &self.dir.join(name),
        )
    }

    pub fn text(&self, name: &str, text: &str) -> Result<()> {
        write_atomic(&self.dir.join(name), text.as_bytes())
    }

    /// `recall.csv`: one line per (method, budget, k_s, direction, K).
    pub fn recall_csv(&self, rows: &[RecallRow<'_>]) -> Result<()> {
        let mut out = String::from("method,anchors,spectral_dim,protocol,direction,k,recall\n");
        for row in rows {
            let protocol = match row.table.protocol {
                Protocol::ImageSpace => "image_space",
                Protocol::CaptionSpace => "caption_space",
            };
            let ks = row.spectral_dim.map(|k| k.to_string()).unwrap_or_default();
            for e in &row.table.entries {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{:.17e}\n",
                    row.method, row.budget, ks, protocol, e.direction, e.k, e.recall
                ));
            }
        }
        self.text("recall.csv", &out)
    }

    pub fn spectra_csv(&self, ls: &[f64], lt: &[f64], rho: Option<&[f64]>) -> Result<()> {
        self.text("spectra.csv", &spectrum_csv(ls, lt, rho)?)
    }
}

/// Every recall table in an align report, caption-space identity checked.
pub fn check_protocol_identity(tables: &[&RecallTable]) -> bool {
    tables
        .iter()
        .all(|t| t.caption_identity_holds().unwrap_or(true))
}
