//! Command-line front end: dataset generation, training, evaluation and inference.
//!
//! Exit codes: 0 ok, 2 usage, 3 I/O, 4 numeric abort, 5 model mismatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mtgan::Error;

pub mod commands;
mod config;
mod grid;

pub use config::{RunConfig, RESOLVED_FILE};
pub use grid::sample_grid;

#[derive(Debug, Parser)]
#[command(name = "mtgan", version, about = "Multi-task cycle GANs for segmentation and depth completion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic street-scene dataset.
    GenData(GenDataArgs),
    /// Train all eight networks from a config file.
    Train(TrainArgs),
    /// Segmentation metrics of a checkpoint's semantic generator.
    EvalSeg(EvalSegArgs),
    /// Depth completion metrics of a checkpoint.
    EvalDepth(EvalDepthArgs),
    /// Run one RGB image and sparse depth map through a checkpoint.
    Infer(InferArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub count: usize,
    /// Image size as WIDTHxHEIGHT.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    pub size: (usize, usize),
    /// Fraction of pixels kept in the sparse depth map.
    #[arg(long, default_value_t = 0.05)]
    pub rho: f32,
    #[arg(long, default_value_t = 20_000.0)]
    pub dmax_mm: f32,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key=value` run configuration.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint written by an earlier run of the same config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Training dataset, overriding `data`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Direction {
    /// Score `G_s` outputs against ground-truth labels.
    #[value(name = "image2label")]
    ImageToLabel,
    #[value(name = "label2image")]
    LabelToImage,
}

#[derive(Debug, Args)]
pub struct EvalSegArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Palette file; the built-in street-scene palette by default.
    #[arg(long)]
    pub palette: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "image2label")]
    pub direction: Direction,
}

#[derive(Debug, Args)]
pub struct EvalDepthArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Binary PPM image.
    #[arg(long)]
    pub rgb: PathBuf,
    /// 16-bit PGM in millimetres, 0 where missing.
    #[arg(long)]
    pub sparse: PathBuf,
    /// Output prefix; writes `<prefix>_sem.ppm` and `<prefix>_dense.pgm`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub palette: Option<PathBuf>,
    /// Depth normalization range of the training data.
    #[arg(long, default_value_t = 20_000.0)]
    pub dmax_mm: f32,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad size `{s}`"));
    Ok((parse(w)?, parse(h)?))
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::NonFinite(_) => 4,
        Error::Checkpoint { .. } | Error::ModelMismatch(_) | Error::Dimension { .. } => 5,
        Error::Contract(_) | Error::NoValidPixels(_) => 1,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
