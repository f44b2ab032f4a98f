mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "plexity", version, about = "Sentence-complexity regression with pseudo-labels and a fold ensemble")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run even when upstream artifacts changed since they were recorded.
    #[arg(long)]
    force: bool,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Read, normalize and deduplicate the corpora.
    Ingest(Common),
    /// Fit feature statistics and write the corpus vectors.
    Featurize(Common),
    /// Build the similarity index from the corpus vectors.
    Index(Common),
    /// Train the labeled-only baseline.
    TrainBaseline(Common),
    /// Retrieve and admit pseudo-labels.
    Pseudolabel(Common),
    /// Train the pseudo-stage models and the fold ensemble.
    TrainEnsemble(Common),
    /// Cross-validate the configured setting and score the test file, if any.
    Evaluate(Common),
    /// Score one sentence per line.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Defaults to predictions.tsv in the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic fixture with a ready-to-run config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2022)]
        seed: u64,
        #[arg(long, default_value_t = 5000)]
        corpus_size: usize,
        #[arg(long, default_value_t = 200)]
        train_size: usize,
        #[arg(long, default_value_t = 60)]
        test_size: usize,
    },
}

fn setup(common: &Common) -> CliResult<LoadedConfig> {
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(CliError::Validation("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    LoadedConfig::load(&common.config)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Ingest(c) => commands::ingest(&setup(&c)?, c.force),
        Command::Featurize(c) => commands::featurize(&setup(&c)?, c.force),
        Command::Index(c) => commands::index(&setup(&c)?, c.force),
        Command::TrainBaseline(c) => commands::train_baseline_cmd(&setup(&c)?, c.force),
        Command::Pseudolabel(c) => commands::pseudolabel(&setup(&c)?, c.force),
        Command::TrainEnsemble(c) => commands::train_ensemble_cmd(&setup(&c)?, c.force),
        Command::Evaluate(c) => commands::evaluate(&setup(&c)?, c.force),
        Command::Predict { common, input, output } => commands::predict(&setup(&common)?, common.force, &input, output.as_deref()),
        Command::Synth {
            out,
            seed,
            corpus_size,
            train_size,
            test_size,
        } => commands::synth(
            &out,
            &plexity::synth::SynthConfig {
                seed,
                corpus_size,
                train_size,
                test_size,
                ..Default::default()
            },
        ),
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
