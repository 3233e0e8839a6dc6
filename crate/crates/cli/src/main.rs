//! `facesynth`: fit the face model, generate and augment datasets, train
//! and apply landmark adapters, and evaluate predictions.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure.

mod commands;
mod error;
mod inputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "facesynth", version, about = "Procedural synthetic face data generator")]
pub struct Cli {
    /// Global seed; every output is a function of it and the inputs.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Generation config (TOML). Defaults are used when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads. Outputs do not depend on this value.
    #[arg(long, global = true, env = "FACESYNTH_WORKERS")]
    pub workers: Option<usize>,

    /// Print a machine-readable JSON summary on stdout.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the built-in template rig and a synthetic scan corpus for it.
    MakeRig(MakeRigArgs),
    /// Learn an identity basis and distribution from a scan corpus.
    FitModel(FitModelArgs),
    /// Render a dataset of labeled samples.
    GenDataset(GenDatasetArgs),
    /// Check a dataset's manifest and every file it references.
    Validate(ValidateArgs),
    /// Render the scene for `--seed` into a directory.
    Preview(PreviewArgs),
    /// Augment one rendered sample (image, mask and landmarks).
    Augment(AugmentArgs),
    /// Train a landmark adapter on source/target pairs.
    TrainAdapt(TrainAdaptArgs),
    /// Map landmark files through a trained adapter.
    ApplyAdapt(ApplyAdaptArgs),
    /// NME and failure rate of landmark predictions.
    EvalLandmarks(EvalLandmarksArgs),
    /// Per-class and merged F1 of predicted parsing masks.
    EvalParsing(EvalParsingArgs),
    /// Emit generation configs for dataset-size and asset ablation studies.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct AssetArgs {
    /// Directory written by `fit-model`. The built-in desk assets are used when omitted.
    #[arg(long, value_name = "DIR")]
    pub assets: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MakeRigArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Number of synthetic scans in the corpus.
    #[arg(long, default_value_t = facesynth_core::desk::CORPUS_SCANS)]
    pub scans: usize,
}

#[derive(Debug, Args)]
pub struct FitModelArgs {
    /// Registered scans in the rig's topology (JSON).
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Template rig (JSON). The built-in template is used when omitted.
    #[arg(long, value_name = "FILE")]
    pub rig: Option<PathBuf>,
    /// Identity components to keep.
    #[arg(long, default_value_t = facesynth_core::desk::DEFAULT_IDENTITY_DIM)]
    pub components: usize,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[arg(long, value_name = "DIR", env = "FACESYNTH_OUTPUT_DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub count: u64,
    /// Image size as WxH or a single side length.
    #[arg(long, value_parser = parse_resolution)]
    pub resolution: Option<(u32, u32)>,
    #[arg(long)]
    pub no_hair: bool,
    #[arg(long)]
    pub no_clothing: bool,
    #[command(flatten)]
    pub assets: AssetArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, value_name = "DIR")]
    pub dir: PathBuf,
    /// Also require the manifest's rig hash to match these assets.
    #[arg(long, value_name = "DIR")]
    pub assets: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreviewArgs {
    #[arg(long, value_name = "DIR", env = "FACESYNTH_OUTPUT_DIR")]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_resolution)]
    pub resolution: Option<(u32, u32)>,
    #[command(flatten)]
    pub assets: AssetArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    None,
    AppearanceOnly,
    Full,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Sample directory holding color.png, mask.png and landmarks.txt.
    #[arg(long, value_name = "DIR")]
    pub sample: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Overrides the mode of the config's augmentation section.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Args)]
pub struct TrainAdaptArgs {
    /// Pair set (JSON with `sources` and `targets`).
    #[arg(long, value_name = "FILE", conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub pairs: Option<PathBuf>,
    /// Instead of `--pairs`, train on this many rendered scenes with a
    /// built-in systematic jawline bias as the target convention.
    #[arg(long, value_name = "N")]
    pub synthetic: Option<usize>,
    /// Where to write the synthetic pair set.
    #[arg(long, value_name = "FILE", requires = "synthetic")]
    pub save_pairs: Option<PathBuf>,
    /// Model file to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Per-epoch loss log to write.
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[command(flatten)]
    pub assets: AssetArgs,
}

#[derive(Debug, Args)]
pub struct ApplyAdaptArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Landmark file, or a directory searched for `.txt` landmark files
    /// (only `landmarks.txt` inside a generated dataset).
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Output file for a single input, otherwise a directory mirroring the input tree.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalLandmarksArgs {
    /// Predicted landmark file or directory of `.txt` files.
    #[arg(long, value_name = "PATH")]
    pub pred: PathBuf,
    /// Ground-truth landmark file or directory, matched by relative path.
    #[arg(long, value_name = "PATH")]
    pub gt: PathBuf,
    /// Per-image NME above which an image counts as a failure.
    #[arg(long, default_value_t = 0.1)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct EvalParsingArgs {
    /// Predicted mask PNG or directory of them.
    #[arg(long, value_name = "PATH")]
    pub pred: PathBuf,
    /// Ground-truth mask PNG or directory, matched by relative path.
    #[arg(long, value_name = "PATH")]
    pub gt: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Full,
    NoClothing,
    NoHairOrClothing,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_name = "DIR", env = "FACESYNTH_OUTPUT_DIR")]
    pub out: PathBuf,
    /// Sample counts, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1000u64, 10_000, 100_000])]
    pub counts: Vec<u64>,
    /// Asset variants, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [VariantArg::Full, VariantArg::NoClothing, VariantArg::NoHairOrClothing])]
    pub variants: Vec<VariantArg>,
}

fn parse_resolution(s: &str) -> Result<(u32, u32), String> {
    let parse = |v: &str| v.trim().parse::<u32>().map_err(|_| format!("`{s}` is not WxH or a side length"));
    match s.split_once(['x', 'X']) {
        Some((w, h)) => Ok((parse(w)?, parse(h)?)),
        None => parse(s).map(|side| (side, side)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let err = CliError::validation("invalid arguments");
            eprint!("{err}\n{e}");
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match commands::run(&cli) {
        Ok(output) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&output.json).expect("summary serializes"));
            } else {
                print!("{}", output.text);
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
