//! `radarsr`: synth → preprocess → train → enhance → eval → register.

mod commands;
mod common;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use common::Context;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "radarsr", version, about = "Radar point-cloud super-resolution with a mean-reverting diffusion model")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults apply to anything omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-file processing.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic LiDAR/radar sequences.
    Synth(OutArgs),
    /// Ground removal, FOV filtering, radar aggregation and rasterization.
    Preprocess(InOutArgs),
    /// Train the denoiser on preprocessed pairs.
    Train(InOutArgs),
    /// Run the reverse diffusion on preprocessed radar images.
    Enhance(EnhanceArgs),
    /// Point-cloud metrics of raw and enhanced radar against LiDAR.
    Eval(CompareArgs),
    /// Registration recall of raw and enhanced radar along each sequence.
    Register(CompareArgs),
    /// Print the default configuration.
    Config,
}

#[derive(Debug, Args)]
struct OutArgs {
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InOutArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EnhanceArgs {
    /// Preprocessed directory.
    #[arg(long)]
    input: PathBuf,
    /// Trained model file.
    #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Use the exact score of the paired LiDAR image instead of a model.
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Preprocessed directory.
    #[arg(long)]
    input: PathBuf,
    /// Output of `enhance`.
    #[arg(long)]
    enhanced: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Config = cli.command {
        print!("{}", radarsr_core::pipeline::PipelineConfig::default().to_toml());
        return Ok(());
    }
    let ctx = Context::load(cli.config.as_deref(), cli.seed, cli.jobs)?;
    match cli.command {
        Command::Synth(a) => commands::synth(&ctx, &a.out),
        Command::Preprocess(a) => commands::preprocess(&ctx, &a.input, &a.out),
        Command::Train(a) => commands::train(&ctx, &a.input, &a.out),
        Command::Enhance(a) => commands::enhance(&ctx, &a.input, a.checkpoint.as_deref(), &a.out),
        Command::Eval(a) => commands::eval(&ctx, &a.input, a.enhanced.as_deref(), &a.out),
        Command::Register(a) => commands::register(&ctx, &a.input, a.enhanced.as_deref(), &a.out),
        Command::Config => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
