use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fmap_core::baselines::Truncation;
use fmap_core::exec::{self, Mode};
use fmap_core::pipeline::Method;
use fmap_core::PipelineConfig;

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "fmap",
    version,
    about = "Spectral functional maps between embedding spaces"
)]
struct Cli {
    /// Run every kernel on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Eigenvalue spectra of two embedding files, side by side.
    Spectra {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Also write both eigenbases as binary matrices.
        #[arg(long)]
        save_bases: bool,
    },
    /// Cross-modal retrieval for one method over a list of anchor budgets.
    Align {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "fmap")]
        method: Method,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20,50,100,500")]
        budgets: Vec<usize>,
        /// Subtract anchor means before the Procrustes fit.
        #[arg(long)]
        procrustes_center: bool,
        /// How Procrustes reduces unequal dimensions.
        #[arg(long, value_enum, default_value_t = TruncationArg::First)]
        truncation: TruncationArg,
        #[arg(long, default_value_t = fmap_core::baselines::CCA_DEFAULT_RIDGE)]
        cca_ridge: f64,
        /// Defaults to min(|S| - 1, d_v, d_t).
        #[arg(long)]
        cca_components: Option<usize>,
    },
    /// Spectral dimension sweep with ZoomOut off.
    AblateK {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "10,20,30,50,70,100")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        budget: usize,
    },
    /// Compatibility diagnostics of the anchor-fitted map.
    Diagnose {
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 100)]
        budget: usize,
    },
    /// a->b->c composition against the direct a->c map.
    Compose {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        c: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 20)]
        budget: usize,
    },
    /// Write a synthetic pair with known correspondence.
    Synth {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        dim: usize,
        /// `swiss-roll` or `mixture:<components>`.
        #[arg(long, default_value = "swiss-roll")]
        structure: String,
        /// `identical`, `isometric`, `noisy:<sigma>` or `unaligned`.
        #[arg(long, default_value = "identical")]
        relation: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Only checks that the cloud is large enough for this graph degree.
        #[arg(long, default_value_t = 15)]
        knn: usize,
        #[arg(long, value_enum, default_value_t = FormatArg::Bin)]
        format: FormatArg,
    },
}

#[derive(Args, Debug)]
struct PairArgs {
    /// Source (vision) embeddings, `.bin` or `.csv`.
    #[arg(long)]
    source: PathBuf,
    /// Target (text) embeddings, row-aligned with the source.
    #[arg(long)]
    target: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    #[arg(long, default_value_t = 15)]
    knn: usize,
    #[arg(long, default_value_t = 50)]
    ks: usize,
    /// `start:max:steps`, or `off`. Defaults to `<ks>:max(100,<ks>):5`.
    #[arg(long)]
    zoomout: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    lambda_comm: f64,
    #[arg(long, default_value_t = 0.001)]
    lambda_tik: f64,
    #[arg(long, default_value_t = 0.1)]
    probe_smoothing: f64,
    #[arg(long, default_value_t = 100)]
    hks_scales: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    recall_k: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    captions_per_image: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TruncationArg {
    First,
    Pca,
}

impl From<TruncationArg> for Truncation {
    fn from(t: TruncationArg) -> Self {
        match t {
            TruncationArg::First => Truncation::FirstCoords,
            TruncationArg::Pca => Truncation::Pca,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Bin,
    Csv,
}

impl ConfigArgs {
    /// The pipeline config and whether ZoomOut is on.
    fn resolve(&self) -> anyhow::Result<(PipelineConfig, bool)> {
        let (zoom, (start, max, steps)) = match self.zoomout.as_deref() {
            None => (true, (self.ks, self.ks.max(100), 5)),
            Some("off") | Some("none") => (false, (self.ks, self.ks.max(100), 5)),
            Some(s) => (true, parse_zoomout(s)?),
        };
        let config = PipelineConfig {
            knn_k: self.knn,
            spectral_dim: self.ks,
            zoomout_start: start,
            zoomout_max: max,
            zoomout_steps: steps,
            lambda_comm: self.lambda_comm,
            lambda_tik: self.lambda_tik,
            probe_smoothing: self.probe_smoothing,
            hks_num_scales: self.hks_scales,
            recall_cutoffs: self.recall_k.clone(),
            captions_per_image: self.captions_per_image,
            seed: self.seed,
        };
        Ok((config, zoom))
    }
}

fn parse_zoomout(s: &str) -> anyhow::Result<(usize, usize, usize)> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, c] = parts.as_slice() else {
        anyhow::bail!("--zoomout expects start:max:steps or off, got {s:?}");
    };
    Ok((a.trim().parse()?, b.trim().parse()?, c.trim().parse()?))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mode = if cli.sequential {
        Mode::Sequential
    } else {
        Mode::Parallel
    };
    match exec::with_mode(mode, || commands::run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::FAILURE
        }
    }
}

/// Context chain down to the first library error, whose message already
/// carries its own causes.
fn render(e: &anyhow::Error) -> String {
    let mut parts = Vec::new();
    for cause in e.chain() {
        parts.push(cause.to_string());
        if cause.downcast_ref::<fmap_core::Error>().is_some() {
            break;
        }
    }
    parts.join(": ")
}
