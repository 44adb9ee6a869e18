use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nowcast_cli::{
    cmd_evaluate, cmd_forecast, cmd_render, cmd_synth, cmd_train, load_config, CliError, Stage,
};

/// Two-stage diffusion nowcasting: synthesize data, train the stages,
/// forecast, verify, render.
#[derive(Parser)]
#[command(name = "nowcast", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic advected-rain dataset directory.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one stage; resumes when the stage checkpoint already exists.
    Train {
        /// Which stage to train.
        #[arg(value_enum)]
        stage: Stage,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Forecast 16 frames from a 4-frame context file, in both resolutions.
    Forecast {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory holding the trained stage checkpoints.
        #[arg(long)]
        models: PathBuf,
        /// TRDM file providing at least 4 context frames.
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ensemble size (defaults to eval.members).
        #[arg(long)]
        members: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a forecast directory against a 16-frame truth file.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        forecast_dir: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render every frame of a sequence file as an 8-bit PGM raster.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth { config, out, seed } => {
            let cfg = load_config(config.as_deref())?;
            cmd_synth(&cfg, &out, seed)
        }
        Command::Train { stage, config, out, seed } => {
            let cfg = load_config(config.as_deref())?;
            cmd_train(stage, &cfg, &out, seed)
        }
        Command::Forecast { config, models, context, out, members, seed } => {
            let cfg = load_config(config.as_deref())?;
            cmd_forecast(&cfg, &models, &context, &out, members, seed)
        }
        Command::Evaluate { config, forecast_dir, truth, out } => {
            let cfg = load_config(config.as_deref())?;
            let out = out.unwrap_or_else(|| forecast_dir.clone());
            cmd_evaluate(&cfg, &forecast_dir, &truth, &out).map(|_| ())
        }
        Command::Render { input, out } => cmd_render(&input, &out).map(|_| ()),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
