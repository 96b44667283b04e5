//! `xrecolor`: synthetic MA-XRF generation, spectral embedding and
//! recolouring from the command line.

mod commands;
mod context;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{Parser, Subcommand};
use xrecolor::config::PipelineConfig;

use commands::{embed, eval, gen, gradcheck, palette, recolor, spectra};
use context::{exit_code, Ctx, VERSION};

#[derive(Parser)]
#[command(name = "xrecolor", version = VERSION, about = "Synthetic MA-XRF datacubes, spectral embedding and virtual recolouring")]
struct Cli {
    /// Pipeline configuration JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize one datacube per seed image and write a dataset manifest.
    Gen(gen::GenArgs),
    /// Draw pixel spectra from the datacubes into train/val/test sets.
    SampleSpectra(spectra::SampleArgs),
    /// Train the spectral embedder.
    TrainEmbed(embed::TrainEmbedArgs),
    /// Encode every datacube into a three-channel embedded image.
    Embed(embed::EmbedArgs),
    /// Train the recolouring transformer on embedded/RGB pairs.
    TrainRecolor(recolor::TrainRecolorArgs),
    /// Recolour embedded images and score them against their RGB targets.
    Infer(recolor::InferArgs),
    /// Score prediction PNGs against ground-truth PNGs.
    Eval(eval::EvalArgs),
    /// Run every finite-difference gradient suite.
    Gradcheck(gradcheck::GradcheckArgs),
    /// Palette utilities.
    #[command(subcommand)]
    Palette(palette::PaletteCommand),
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut config = match &cli.config {
        Some(p) => {
            PipelineConfig::load(p).with_context(|| format!("reading config {}", p.display()))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.set_seed(s);
    }
    config.check_paths()?;
    let mut ctx = Ctx {
        config,
        out: cli.out,
    };
    match cli.command {
        Command::Gen(a) => gen::run(&mut ctx, a),
        Command::SampleSpectra(a) => spectra::run(&mut ctx, a),
        Command::TrainEmbed(a) => embed::train(&mut ctx, a),
        Command::Embed(a) => embed::embed(&mut ctx, a),
        Command::TrainRecolor(a) => recolor::train(&mut ctx, a),
        Command::Infer(a) => recolor::infer(&mut ctx, a),
        Command::Eval(a) => eval::run(&mut ctx, a),
        Command::Gradcheck(a) => gradcheck::run(&mut ctx, a),
        Command::Palette(c) => palette::run(&mut ctx, c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
