use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod report;

#[derive(Parser)]
#[command(name = "landmatch", version, about = "Landmark patch matching with spatial neighborhood graphs")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark and write it as a manifest dataset.
    Synth,
    /// Train a model; writes the checkpoint and the loss history.
    Train,
    /// Evaluate a checkpoint on the test split (or on `data.test_manifest`).
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score every pair with its own label (debug).
        #[arg(long, conflicts_with = "checkpoint")]
        perfect_oracle: bool,
    },
    /// Score every patch pair between two frames of the dataset.
    Match {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        frame_a: String,
        #[arg(long)]
        frame_b: String,
    },
    /// Train and evaluate ablation variants, one metrics row each.
    Ablate {
        /// Warm start every variant from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated `pair:disc` names, or `all`.
        #[arg(long, default_value = "table")]
        variants: String,
    },
    /// Place recognition on a synthetic route.
    Place {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Stereo landmark depth: disparity noise study and matched depths.
    Stereo {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Exact checks of the information-distance bounds.
    VerifyTheory {
        #[arg(long)]
        trials: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = commands::Context::new(&cli.common).and_then(|ctx| match cli.command {
        Command::Synth => commands::synth(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Eval {
            checkpoint,
            perfect_oracle,
        } => commands::eval(&ctx, checkpoint.as_deref(), perfect_oracle),
        Command::Match {
            checkpoint,
            frame_a,
            frame_b,
        } => commands::match_frames(&ctx, &checkpoint, &frame_a, &frame_b),
        Command::Ablate { checkpoint, variants } => commands::ablate(&ctx, checkpoint.as_deref(), &variants),
        Command::Place { checkpoint } => commands::place(&ctx, &checkpoint),
        Command::Stereo { checkpoint } => commands::stereo(&ctx, checkpoint.as_deref()),
        Command::VerifyTheory { trials } => commands::verify_theory(&ctx, trials),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", report::error_json(&e));
            ExitCode::from(report::exit_code(&e))
        }
    }
}
