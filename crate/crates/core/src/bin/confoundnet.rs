use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use confoundnet::experiment::{cmd_ab, cmd_eval, cmd_gen_data, cmd_gradcheck, cmd_train, DataSource, RunConfig};
use confoundnet::Error;

#[derive(Parser)]
#[command(name = "confoundnet", version, about = "Pose-aware CNN training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply to every omitted key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the training / initialization seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and write it to disk.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Train one network.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory; overrides the config's data source.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        strip_pose: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every kernel and the combined objective.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Matched-pair baseline vs pose-aware comparison over several seeds.
    Ab {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.hyper.seed = seed;
        cfg.ab_seeds = vec![seed];
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::GenData { common, out, force } => {
            print!("{}", cmd_gen_data(&load(&common)?, out.as_deref(), force)?);
        }
        Command::Train { common, out } => {
            print!("{}", cmd_train(&load(&common)?, out.as_deref(), true)?);
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            strip_pose,
            out,
        } => {
            let mut cfg = load(&common)?;
            if let Some(dir) = data {
                cfg.data = DataSource::Directory(dir);
            }
            print!("{}", cmd_eval(&checkpoint, &cfg, strip_pose, out.as_deref())?);
        }
        Command::Gradcheck { common } => {
            let report = cmd_gradcheck(&load(&common)?)?;
            print!("{report}");
            if !report.passed() {
                eprintln!("gradient check FAILED");
                return Ok(4);
            }
        }
        Command::Ab { common, out } => {
            print!("{}", cmd_ab(&load(&common)?, out.as_deref(), true)?);
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
