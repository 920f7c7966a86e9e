//! `depthrec` command-line front end.
//!
//! Exit codes: 0 success, 1 validation error (arguments, config, inputs),
//! 2 runtime failure. Outputs of a failed command are removed.

mod commands;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use util::Failure;

#[derive(Debug, Parser)]
#[command(name = "depthrec", version, about = "Raw depth degradation, uncertainty labelling and RGB-guided recovery")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Run config (TOML); defaults are used for anything it omits.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-sample work; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: u16,
    /// Parameter precision for training and inference.
    #[arg(long, global = true, value_enum)]
    pub precision: Option<PrecisionArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PrecisionArg {
    #[value(name = "32")]
    F32,
    #[value(name = "64")]
    F64,
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
pub enum DepthExt {
    #[default]
    Png,
    Pfm,
}

impl DepthExt {
    pub fn ext(self) -> &'static str {
        match self {
            DepthExt::Png => "png",
            DepthExt::Pfm => "pfm",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Degrade ground truth into raw depth (optionally synthesizing scenes first).
    Generate {
        /// Input manifest; omit with --synthetic.
        #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
        manifest: Option<PathBuf>,
        /// Degradation recipe (TOML); defaults to the config's recipe.
        #[arg(long)]
        recipe: Option<PathBuf>,
        /// Synthesize this many RGB-D scenes instead of reading a manifest.
        #[arg(long)]
        synthetic: Option<usize>,
        /// Side of synthesized scenes.
        #[arg(long, default_value_t = 128, requires = "synthetic")]
        size: usize,
        /// Output directory; receives raw/ and manifest.toml.
        #[arg(long)]
        out: PathBuf,
    },
    /// Threshold raw against ground truth into uncertainty maps.
    Label {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory; receives uncertainty/ and manifest.toml.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the per-pixel uncertainty classifier.
    TrainUncertainty {
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint path; a `.toml` sidecar and `.history.tsv` are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the recovery model.
    TrainRecover {
        #[arg(long)]
        manifest: PathBuf,
        /// Predict masks with this classifier instead of the manifest labels.
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a trained recovery model over a manifest.
    Recover {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Predict masks with this classifier; otherwise the manifest labels are used.
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: DepthExt,
    },
    /// Score predictions (or the raw input) against ground truth.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory of `<id>.png` / `<id>.pfm` predictions.
        #[arg(long, required_unless_present = "raw", conflicts_with = "raw")]
        pred_dir: Option<PathBuf>,
        /// Evaluate the manifest's raw depth instead.
        #[arg(long)]
        raw: bool,
        /// δ ratio threshold.
        #[arg(long, default_value_t = depthrec::metrics::DEFAULT_DELTA_THRESHOLD)]
        delta: f64,
        #[arg(long, value_enum, default_value_t)]
        aggregation: AggregationArg,
        /// Also write the table here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference checks of every differentiable block; exit 0 iff all pass.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Side-by-side RGB | raw | recovered | GT panels.
    RenderPanels {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
pub enum AggregationArg {
    #[default]
    PerSample,
    PixelWeighted,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let kind = match f {
                Failure::Validation(_) => "invalid input",
                Failure::Runtime(_) => "failed",
            };
            eprintln!("error ({kind}): {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
