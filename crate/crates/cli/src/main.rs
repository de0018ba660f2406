//! warpgen: train, infer, warp, edit, and evaluate exemplar-based image
//! translation models.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "warpgen",
    version,
    about = "Exemplar-driven image translation via dense cross-domain correspondence"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a dataset directory or the built-in toy scenes.
    Train(TrainArgs),
    /// Synthesize an image from an input annotation and an exemplar photo.
    Infer(InferArgs),
    /// Export the dense warped exemplar and optional sparse correspondences.
    Warp(WarpArgs),
    /// Re-synthesize a photo under an edited mask, using the photo itself as
    /// the exemplar.
    Edit(EditArgs),
    /// Evaluate semantic consistency and style relevance on the val split.
    Metrics(MetricsArgs),
    /// Generate a toy shapes dataset on disk.
    GenToyData(GenToyArgs),
    /// Print the canonical text of a built-in configuration preset.
    PrintConfig(PrintConfigArgs),
}

#[derive(clap::Args)]
pub struct TrainArgs {
    /// Configuration file path, or a preset name (full256, desk64, toy32,
    /// tiny16) prefixed with `preset:`.
    #[arg(long)]
    pub config: String,
    /// Dataset directory containing manifest.json.
    #[arg(long, conflicts_with = "toy")]
    pub data: Option<PathBuf>,
    /// Train on an in-memory toy dataset with this many scenes.
    #[arg(long)]
    pub toy: Option<usize>,
    /// Task kind for --toy (mask, edge, pose).
    #[arg(long, default_value = "mask")]
    pub task: String,
    /// Output directory for the run (logs + checkpoints).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Resume from a checkpoint archive.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Force bit-reproducible mode regardless of the config.
    #[arg(long)]
    pub deterministic: bool,
    /// Override [train] steps from the config.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(clap::Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Annotation input: label-map PNG (mask/edge tasks) or keypoints JSON
    /// (pose task).
    #[arg(long)]
    pub input: PathBuf,
    /// Exemplar photo PNG.
    #[arg(long)]
    pub exemplar: PathBuf,
    /// Output image path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the warped exemplar at correlation resolution.
    #[arg(long)]
    pub dump_warp: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(clap::Args)]
pub struct WarpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub exemplar: PathBuf,
    /// Dense warp output image.
    #[arg(long)]
    pub out: PathBuf,
    /// Query points file: one `row col` pair per line on the correlation grid.
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// Sparse correspondence output (`u_row u_col v_row v_col` per line).
    #[arg(long)]
    pub points_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(clap::Args)]
pub struct EditArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Original photo (used as the self-exemplar).
    #[arg(long)]
    pub image: PathBuf,
    /// Original label map.
    #[arg(long)]
    pub mask: PathBuf,
    /// Edited label map to synthesize under.
    #[arg(long)]
    pub edited_mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(clap::Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output JSON path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(clap::Args)]
pub struct GenToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value = "mask")]
    pub kind: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(clap::Args)]
pub struct PrintConfigArgs {
    /// Preset name: full256, desk64, toy32, or tiny16.
    #[arg(long)]
    pub preset: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => commands::train(args),
        Command::Infer(args) => commands::infer(args),
        Command::Warp(args) => commands::warp(args),
        Command::Edit(args) => commands::edit(args),
        Command::Metrics(args) => commands::metrics(args),
        Command::GenToyData(args) => commands::gen_toy_data(args),
        Command::PrintConfig(args) => commands::print_config(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
