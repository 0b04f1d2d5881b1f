mod commands;
mod fetch;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hypergcl::netcl::NegativeStrategy;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DIVERGED: u8 = 2;
pub const EXIT_VERIFY_FAILED: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "hypergcl", version, about = "Hypergraph contrastive learning for node classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the attribute, local and global views and write them with a manifest.
    BuildViews {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Train over a list of seeds; writes metrics, curves and the best checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds, overriding `trainer.seeds`.
        #[arg(long, value_delimiter = ',')]
        seed_list: Option<Vec<u64>>,
        #[arg(long)]
        strategy: Option<NegativeStrategy>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Full model plus one run per disabled component.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Component names (comma-separated or repeated); `main` expands to the six headline rows.
        #[arg(long, value_delimiter = ',')]
        component: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        seed_list: Option<Vec<u64>>,
        #[arg(long)]
        strategy: Option<NegativeStrategy>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Accuracy as a function of the number of global nodes.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `a..b` (inclusive), `a-b`, or a comma list.
        #[arg(long, default_value = "0..6")]
        ng_range: String,
        #[arg(long, value_delimiter = ',')]
        seed_list: Option<Vec<u64>>,
        #[arg(long)]
        strategy: Option<NegativeStrategy>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run the oracle suite; exits 3 if any case fails.
    Verify {
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Download a LINQS citation dataset and convert it.
    FetchData {
        #[arg(value_parser = ["cora", "citeseer"])]
        dataset: String,
        /// Defaults to `HYPERGCL_DATA_DIR`, else `data`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Expected SHA-256 of the archive.
        #[arg(long)]
        sha256: Option<String>,
    },
}

/// Failure carrying the process exit code.
#[derive(Debug)]
pub struct Exit(pub u8);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "exit {}", self.0)
    }
}

impl std::error::Error for Exit {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(Exit(code)) = err.downcast_ref::<Exit>() {
        return *code;
    }
    match err.downcast_ref::<hypergcl::Error>() {
        Some(hypergcl::Error::Diverged { .. }) => EXIT_DIVERGED,
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::BuildViews { config, out_dir } => commands::build_views(&config, &out_dir),
        Command::Train {
            config,
            seed_list,
            strategy,
            out_dir,
        } => commands::train(&config, seed_list, strategy, &out_dir),
        Command::Ablate {
            config,
            component,
            seed_list,
            strategy,
            out_dir,
        } => commands::ablate(&config, &component, seed_list, strategy, &out_dir),
        Command::Sweep {
            config,
            ng_range,
            seed_list,
            strategy,
            out_dir,
        } => commands::sweep(&config, &ng_range, seed_list, strategy, &out_dir),
        Command::Verify { out_dir } => commands::verify(&out_dir),
        Command::FetchData {
            dataset,
            out_dir,
            sha256,
        } => fetch::fetch_data(&dataset, out_dir, sha256.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            if e.downcast_ref::<Exit>().is_none() {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(code)
        }
    }
}
