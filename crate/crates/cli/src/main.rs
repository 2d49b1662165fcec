mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "perturbench",
    version,
    about = "Perturbation benchmarks for manipulation policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
pub struct Common {
    /// Base seed for every random choice made by the command.
    #[arg(long)]
    pub seed: u64,
    /// Run directory holding manifest/, records/ and reports/.
    #[arg(long, default_value = "run")]
    pub run_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate candidate variants, or filter and balance them with --filter-records.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        config: PathBuf,
        /// Reference-model records; switches to filtering the candidates.
        #[arg(long, num_args = 1..)]
        filter_records: Vec<PathBuf>,
        /// Overrides filter.ceiling_rule.
        #[arg(long)]
        ceiling: Option<f64>,
    },
    /// Run the configured environment and policy over a manifest or pair grid.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        config: PathBuf,
        /// Manifest directory; defaults to manifest/benchmark, then manifest/candidates.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Pairwise gaps, chi-square tests and heatmaps.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Record files; defaults to everything under records/.
        #[arg(long, num_args = 1..)]
        records: Vec<PathBuf>,
        /// `all` or a comma-separated dimension list.
        #[arg(long, default_value = "all")]
        pairs: String,
        /// Also write PNG heatmaps.
        #[arg(long)]
        png: bool,
    },
    /// Difficulty levels from reference-model outcomes.
    Stratify {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1..)]
        records: Vec<PathBuf>,
        #[arg(long, default_value_t = 4)]
        n_models: usize,
    },
    /// Per-dimension success and drop tables, plus level curves when strata exist.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1..)]
        records: Vec<PathBuf>,
        /// Strata file; defaults to reports/strata.json when present.
        #[arg(long)]
        strata: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate {
            common,
            config,
            filter_records,
            ceiling,
        } => commands::generate(&common, &config, &filter_records, ceiling),
        Command::Evaluate {
            common,
            config,
            manifest,
        } => commands::evaluate(&common, &config, manifest.as_deref()),
        Command::Analyze {
            common,
            records,
            pairs,
            png,
        } => commands::analyze(&common, &records, &pairs, png),
        Command::Stratify {
            common,
            records,
            n_models,
        } => commands::stratify(&common, &records, n_models),
        Command::Report {
            common,
            records,
            strata,
        } => commands::report(&common, &records, strata.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<config::ConfigError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
