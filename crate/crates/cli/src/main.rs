//! Command-line driver for the try-on engine: dataset generation, localizer
//! and denoiser training, segmentation, try-on runs, evaluation suites, and
//! ablation grids. Failures exit nonzero with a single `error: ...` line on
//! stderr; successes print one summary JSON line on stdout.

mod checkpoint;
mod commands;
mod config;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "dtrend", version, about = "Desk-scale training-free virtual try-on")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic paired try-on dataset.
    GenData(commands::GenDataArgs),
    /// Train the apparel localizer on a dataset's training split.
    TrainLocalizer(commands::TrainLocalizerArgs),
    /// Train the tiny diffusion denoiser on a dataset's training split.
    TrainDenoiser(commands::TrainDenoiserArgs),
    /// Predict a garment mask for one image.
    Segment(commands::SegmentArgs),
    /// Dress a model image in an in-store garment.
    Tryon(commands::TryonArgs),
    /// Run an evaluation suite over a dataset's validation split.
    Eval(commands::EvalArgs),
    /// Sweep one pipeline knob and tabulate paired metrics per value.
    Ablate(commands::AblateArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::GenData(a) => commands::gen_data(a),
        Cmd::TrainLocalizer(a) => commands::train_localizer(a),
        Cmd::TrainDenoiser(a) => commands::train_denoiser(a),
        Cmd::Segment(a) => commands::segment(a),
        Cmd::Tryon(a) => commands::tryon(a),
        Cmd::Eval(a) => commands::eval(a),
        Cmd::Ablate(a) => commands::ablate(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
