mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use anomaly_forge_core::dataset::Split;
use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Forge synthetic anomalies, train the staged model, and evaluate
/// anomaly maps on procedural textures.
#[derive(Debug, Parser)]
#[command(name = "anomaly-forge", version)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write train/test splits of normal textures and forged anomalies.
    Forge {
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Run the training stages and write one checkpoint per stage.
    Train {
        /// Dataset root containing `train/`.
        #[arg(long, value_name = "DIR")]
        dataset: Option<PathBuf>,
        /// Continue from a checkpoint.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
        /// Stages to run, comma separated; defaults to all remaining.
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<u8>>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a split with a checkpoint and write a metrics report.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Also write one fused heatmap per image.
        #[arg(long)]
        heatmaps: bool,
        /// Score the ground-truth masks instead of predicted maps.
        #[arg(long)]
        oracle_maps: bool,
    },
    /// Build a k-shot memory bank from normal images.
    Bank {
        #[arg(long)]
        k: usize,
        /// Directory of PGM images or a dataset split directory.
        #[arg(long, value_name = "DIR")]
        normals: PathBuf,
        /// Seed for choosing the k images; defaults to --seed.
        #[arg(long)]
        bank_seed: Option<u64>,
    },
    /// Write the fused anomaly map of one image.
    Map {
        #[arg(long, value_name = "PATH")]
        image: PathBuf,
        #[arg(long, value_name = "PATH", conflicts_with = "bank", required_unless_present = "bank")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        bank: Option<PathBuf>,
    },
    /// Validate a prompt bank file (the bundled bank when omitted).
    Prompts { path: Option<PathBuf> },
}

fn effective_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    match &cli.command {
        Command::Forge { n_train, n_test } => {
            cfg.forge.n_train = n_train.unwrap_or(cfg.forge.n_train);
            cfg.forge.n_test = n_test.unwrap_or(cfg.forge.n_test);
        }
        Command::Train { dataset, epochs, .. } => {
            cfg.dataset = dataset.clone().or(cfg.dataset);
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
        }
        Command::Eval { dataset, .. } => cfg.dataset = dataset.clone().or(cfg.dataset),
        _ => {}
    }
    Ok(cfg)
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("ANOMALY_FORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("ANOMALY_FORGE_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))
}

fn run(cli: Cli) -> CliResult<String> {
    configure_threads()?;
    let cfg = effective_config(&cli)?;
    if cli.print_config {
        return Ok(cfg.to_json());
    }
    let needs_seed = matches!(cli.command, Command::Forge { .. } | Command::Train { .. });
    cfg.validate(needs_seed)?;
    match &cli.command {
        Command::Forge { .. } => commands::forge(&cfg),
        Command::Train { resume, stages, .. } => commands::train(&cfg, resume.as_deref(), stages.as_deref()),
        Command::Eval { checkpoint, split, heatmaps, oracle_maps, .. } => {
            commands::eval(&cfg, checkpoint, (*split).into(), *heatmaps, *oracle_maps)
        }
        Command::Bank { k, normals, bank_seed } => commands::bank(&cfg, *k, normals, *bank_seed),
        Command::Map { image, checkpoint, bank } => {
            let source = match (checkpoint, bank) {
                (Some(c), _) => commands::MapSource::Checkpoint(c),
                (None, Some(b)) => commands::MapSource::Bank(b),
                (None, None) => unreachable!("clap requires one source"),
            };
            commands::map(&cfg, image, source)
        }
        Command::Prompts { path } => commands::prompts(path.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            eprintln!("{}", CliError::Usage(e.to_string().trim_end().to_string()).to_json());
            return ExitCode::FAILURE;
        }
    };
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
