use std::path::Path;

use anyhow::{bail, Context};
use fmap_core::baselines::ProcrustesOptions;
use fmap_core::dataio::{
    load_embeddings, write_atomic, write_embeddings, write_matrix_binary, EmbeddingFormat,
};
use fmap_core::pipeline::{
    ablate_k, align, check_protocol_identity, compose, diagnose_pair, spectra, AblateSpec,
    AlignSpec, RecallRow, RunWriter,
};
use fmap_core::synth::{gen_base_cloud, gen_pair, CloudSpec, Relation, Structure};
use fmap_core::{EmbeddingMatrix, PipelineConfig};
use serde::Serialize;

use crate::{Command, ConfigArgs, FormatArg, PairArgs};

fn load(path: &Path, modality: &str) -> anyhow::Result<EmbeddingMatrix> {
    let z = load_embeddings(path, EmbeddingFormat::from_path(path))
        .with_context(|| format!("input: loading {}", path.display()))?;
    Ok(z.with_modality(modality))
}

fn load_pair(pair: &PairArgs) -> anyhow::Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    Ok((load(&pair.source, "source")?, load(&pair.target, "target")?))
}

fn resolve(config: &ConfigArgs) -> anyhow::Result<(PipelineConfig, bool)> {
    config.resolve().context("config")
}

pub fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Spectra {
            pair,
            config,
            save_bases,
        } => cmd_spectra(&pair, &config, save_bases),
        Command::Align {
            pair,
            config,
            method,
            budgets,
            procrustes_center,
            truncation,
            cca_ridge,
            cca_components,
        } => {
            let (cfg, zoom) = resolve(&config)?;
            let spec = AlignSpec {
                method,
                budgets,
                zoomout: zoom,
                procrustes: ProcrustesOptions {
                    center: procrustes_center,
                    truncation: truncation.into(),
                },
                cca_ridge,
                cca_components,
            };
            cmd_align(&pair, &cfg, &spec)
        }
        Command::AblateK {
            pair,
            config,
            dims,
            budget,
        } => {
            let (cfg, _) = resolve(&config)?;
            let spec = AblateSpec {
                spectral_dims: dims,
                budget,
            };
            cmd_ablate(&pair, &cfg, &spec)
        }
        Command::Diagnose {
            pair,
            config,
            budget,
        } => {
            let (cfg, _) = resolve(&config)?;
            cmd_diagnose(&pair, &cfg, budget)
        }
        Command::Compose {
            a,
            b,
            c,
            out,
            config,
            budget,
        } => {
            let (cfg, zoom) = resolve(&config)?;
            let (za, zb, zc) = (load(&a, "a")?, load(&b, "b")?, load(&c, "c")?);
            let report = compose(&za, &zb, &zc, budget, zoom, &cfg)?;
            let w = RunWriter::new(&out, &cfg)?;
            w.json("compose.json", "compose", &report)?;
            let mut rows = Vec::new();
            for r in &report.rows {
                for table in [&r.image_space, &r.caption_space] {
                    rows.push(RecallRow {
                        method: &r.name,
                        budget,
                        spectral_dim: Some(cfg.spectral_dim),
                        table,
                    });
                }
            }
            w.recall_csv(&rows)?;
            w.config("compose")?;
            Ok(())
        }
        Command::Synth {
            out,
            n,
            dim,
            structure,
            relation,
            seed,
            knn,
            format,
        } => cmd_synth(&out, n, dim, &structure, &relation, seed, knn, format),
    }
}

fn cmd_spectra(pair: &PairArgs, config: &ConfigArgs, save_bases: bool) -> anyhow::Result<()> {
    let (cfg, _) = resolve(config)?;
    let (zv, zt) = load_pair(pair)?;
    let (report, v, t) = spectra(&zv, &zt, &cfg)?;
    let w = RunWriter::new(&pair.out, &cfg)?;
    w.json("spectra.json", "spectra", &report)?;
    w.spectra_csv(&report.values_source, &report.values_target, None)?;
    if save_bases {
        v.basis.write(&pair.out, "source")?;
        t.basis.write(&pair.out, "target")?;
    }
    w.config("spectra")?;
    Ok(())
}

#[derive(Serialize)]
struct CellDiagnostics<'a> {
    method: &'a str,
    budget: usize,
    solved: &'a fmap_core::DiagnosticsReport,
    refined: Option<&'a fmap_core::DiagnosticsReport>,
}

fn cmd_align(pair: &PairArgs, cfg: &PipelineConfig, spec: &AlignSpec) -> anyhow::Result<()> {
    let (zv, zt) = load_pair(pair)?;
    let report = align(&zv, &zt, spec, cfg)?;
    let tables: Vec<_> = report
        .cells
        .iter()
        .flat_map(|c| [&c.image_space, &c.caption_space])
        .collect();
    if !check_protocol_identity(&tables) {
        bail!("recall: caption-space i2t R@1 differs from R@5");
    }
    let w = RunWriter::new(&pair.out, cfg)?;
    let method = spec.method.as_str();
    let rows: Vec<RecallRow> = report
        .cells
        .iter()
        .flat_map(|c| {
            [&c.image_space, &c.caption_space].map(|table| RecallRow {
                method,
                budget: c.budget,
                spectral_dim: c.spectral_dim,
                table,
            })
        })
        .collect();
    w.recall_csv(&rows)?;
    w.json("recall.json", "align", &report)?;
    if spec.method.spectral() {
        let diags: Vec<CellDiagnostics> = report
            .cells
            .iter()
            .filter_map(|c| {
                c.diagnostics.as_ref().map(|d| CellDiagnostics {
                    method,
                    budget: c.budget,
                    solved: d,
                    refined: c.refined_diagnostics.as_ref(),
                })
            })
            .collect();
        w.json("diagnostics.json", "diagnostics", &diags)?;
        if let Some(s) = &report.spectra {
            // rho of the largest budget's solved map.
            let rho = report
                .cells
                .last()
                .and_then(|c| c.diagnostics.as_ref())
                .map(|d| &d.diag_dominance[..]);
            w.spectra_csv(&s.values_source, &s.values_target, rho)?;
        }
        let maps = pair.out.join("maps");
        std::fs::create_dir_all(&maps)
            .with_context(|| format!("output: creating {}", maps.display()))?;
        for c in &report.cells {
            if let Some(m) = &c.map {
                m.save(
                    &maps.join(format!("{method}_s{}.bin", c.budget)),
                    &cfg.hash(),
                )?;
            }
        }
    }
    for s in &report.skipped {
        log::warn!("{} at |S| = {} skipped: {}", s.method, s.budget, s.reason);
    }
    w.config("align")?;
    Ok(())
}

fn cmd_ablate(pair: &PairArgs, cfg: &PipelineConfig, spec: &AblateSpec) -> anyhow::Result<()> {
    let (zv, zt) = load_pair(pair)?;
    let report = ablate_k(&zv, &zt, spec, cfg)?;
    let w = RunWriter::new(&pair.out, cfg)?;
    let rows: Vec<RecallRow> = report
        .rows
        .iter()
        .flat_map(|r| {
            [&r.image_space, &r.caption_space].map(|table| RecallRow {
                method: "fmap",
                budget: spec.budget,
                spectral_dim: Some(r.spectral_dim),
                table,
            })
        })
        .collect();
    w.recall_csv(&rows)?;
    w.json("ablate.json", "ablate_k", &report)?;
    if !report.i2t_r1_nondecreasing {
        log::info!("caption-space i2t R@1 is not monotone in the spectral dimension");
    }
    w.config("ablate-k")?;
    Ok(())
}

fn cmd_diagnose(pair: &PairArgs, cfg: &PipelineConfig, budget: usize) -> anyhow::Result<()> {
    let (zv, zt) = load_pair(pair)?;
    let report = diagnose_pair(&zv, &zt, budget, cfg)?;
    let w = RunWriter::new(&pair.out, cfg)?;
    w.json("diagnostics.json", "diagnostics", &report)?;
    let k = report.diagnostics.spectral_dim;
    w.spectra_csv(
        &report.spectra.values_source[..k],
        &report.spectra.values_target[..k],
        Some(&report.diagnostics.diag_dominance),
    )?;
    if let Some(m) = &report.map {
        m.save(&pair.out.join("map.bin"), &cfg.hash())?;
    }
    w.config("diagnose")?;
    Ok(())
}

fn parse_structure(s: &str) -> anyhow::Result<Structure> {
    match s.split_once(':') {
        None if s == "swiss-roll" || s == "swiss_roll" => Ok(Structure::SwissRoll),
        Some(("mixture", m)) => Ok(Structure::GaussianMixture {
            components: m.parse().context("mixture components")?,
        }),
        _ => bail!("unknown structure {s:?}; expected swiss-roll or mixture:<m>"),
    }
}

fn parse_relation(s: &str) -> anyhow::Result<Relation> {
    match s.split_once(':') {
        None if s == "identical" => Ok(Relation::Identical),
        None if s == "isometric" => Ok(Relation::Isometric),
        None if s == "unaligned" => Ok(Relation::Unaligned),
        Some(("noisy", sigma)) => Ok(Relation::IsometricNoisy {
            sigma: sigma.parse().context("noise level")?,
        }),
        _ => bail!(
            "unknown relation {s:?}; expected identical, isometric, noisy:<sigma> or unaligned"
        ),
    }
}

#[derive(Serialize)]
struct SynthManifest {
    spec: CloudSpec,
    relation: Relation,
    pair_seed: u64,
    files: Vec<String>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    out: &Path,
    n: usize,
    dim: usize,
    structure: &str,
    relation: &str,
    seed: u64,
    knn: usize,
    format: FormatArg,
) -> anyhow::Result<()> {
    let spec = CloudSpec {
        n_points: n,
        dim,
        structure: parse_structure(structure).context("synth")?,
        seed,
    };
    let relation = parse_relation(relation).context("synth")?;
    let base = gen_base_cloud(spec, knn).context("synth")?;
    let pair_seed = seed.wrapping_add(1);
    let p = gen_pair(&base, relation, pair_seed).context("synth")?;
    std::fs::create_dir_all(out).with_context(|| format!("output: creating {}", out.display()))?;
    let (fmt, ext) = match format {
        FormatArg::Bin => (EmbeddingFormat::Binary, "bin"),
        FormatArg::Csv => (EmbeddingFormat::Csv, "csv"),
    };
    let mut files = vec![
        format!("a.{ext}"),
        format!("b.{ext}"),
        "labels.csv".to_owned(),
    ];
    write_embeddings(&p.a, &out.join(&files[0]), fmt)?;
    write_embeddings(&p.b, &out.join(&files[1]), fmt)?;
    let labels: String = p.labels.iter().map(|l| format!("{l}\n")).collect();
    write_atomic(&out.join("labels.csv"), labels.as_bytes())?;
    if let Some(q) = &p.planted_transform {
        write_matrix_binary(q, &out.join("planted.bin"))?;
        files.push("planted.bin".into());
    }
    let manifest = SynthManifest {
        spec,
        relation,
        pair_seed,
        files,
    };
    fmap_core::dataio::write_report(&manifest, &out.join("synth.json"))?;
    Ok(())
}
