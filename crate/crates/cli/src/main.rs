use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;

/// Errors split by exit code: usage and config problems exit 2, everything
/// else exits 1.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] tased_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "tased", version, about = "Video saliency: synth, train, predict, eval, summary")]
struct Cli {
    /// Worker threads (default: all cores). TASED_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PoolArg {
    Global,
    PerVideo,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic moving-blob dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        videos: usize,
        #[arg(long, default_value_t = 70)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 1)]
        blobs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train from a run config; writes checkpoints and a CSV log to the output dir.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from this checkpoint (overrides paths.checkpoint).
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict one saliency PNG per frame of a video directory.
    Predict {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// A `<video-id>` directory containing `frames/`.
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score `<pred>/<video-id>/NNNNN.png` against a ground-truth dataset root.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Where metrics.csv and metrics.json go (default: the prediction dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = PoolArg::Global)]
        pool: PoolArg,
        #[arg(long, default_value_t = 100)]
        splits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the layer table of a configured network.
    Summary {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        aggregation: Option<String>,
        #[arg(long)]
        upsampling: Option<String>,
    },
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    match std::env::var("TASED_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Usage(format!("TASED_THREADS = {v:?} is not a positive integer"))),
        Err(_) => match flag {
            Some(0) => Err(CliError::Usage("--threads must be positive".into())),
            other => Ok(other),
        },
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))?;
    }
    match cli.command {
        Command::Synth {
            out,
            videos,
            frames,
            height,
            width,
            blobs,
            seed,
        } => commands::synth(&out, videos, frames, [height, width], blobs, seed, cli.json),
        Command::Train { config, resume, data, out } => commands::train(&config, resume, data, out, cli.json),
        Command::Predict {
            config,
            checkpoint,
            video,
            out,
        } => commands::predict(&config, checkpoint, &video, &out, cli.json),
        Command::Eval {
            pred,
            gt,
            out,
            pool,
            splits,
            seed,
        } => commands::eval(&pred, &gt, out, pool, splits, seed, cli.json),
        Command::Summary {
            config,
            aggregation,
            upsampling,
        } => commands::summary(&config, aggregation, upsampling, cli.json),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
