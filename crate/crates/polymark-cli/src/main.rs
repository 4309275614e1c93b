//! Command-line front end for watermark generation, attack, detection,
//! clustering, delta-model training, and evaluation.
//!
//! Exit codes: 0 on success, 1 when the work itself fails (bad data,
//! checksum mismatch, detector errors), 2 on invocation or configuration
//! errors (clap uses 2 for its own parse failures as well).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CommonArgs;

#[derive(Parser)]
#[command(
    name = "polymark",
    about = "Embed, attack, detect, and evaluate token-level text watermarks",
    version
)]
struct Cli {
    /// Run config JSON; most commands require it.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides the run config's seed.
    #[arg(short, long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides the run config's out_dir.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; 0 means one per core.
    #[arg(short, long, global = true, default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample responses for each prompt, watermarked by the configured engine.
    Generate,
    /// Rewrite a corpus through the configured attack.
    Attack,
    /// Score one text field of each record with the configured detector.
    Detect,
    /// Group vocabulary tokens into semantic clusters via the dictionary.
    Cluster,
    /// Train a delta model and save it as a reusable artifact.
    TrainSir,
    /// Summarize consistency and detection quality from detection files.
    Evaluate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args = CommonArgs {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        jobs: cli.jobs,
    };
    let result = match cli.command {
        Command::Generate => commands::cmd_generate(&args),
        Command::Attack => commands::cmd_attack(&args),
        Command::Detect => commands::cmd_detect(&args),
        Command::Cluster => commands::cmd_cluster(&args),
        Command::TrainSir => commands::cmd_train_sir(&args),
        Command::Evaluate => commands::cmd_evaluate(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
