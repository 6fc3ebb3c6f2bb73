//! `strb`: offline training, online queries and validation for the
//! space-time reduced basis thermal block.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use strb_core::config::Profile;
use strb_core::greedy::EstimatorKind;
use strb_core::Error;

#[derive(Parser, Debug)]
#[command(name = "strb", version, about = "Certified space-time reduced basis solver")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// TOML file overriding the profile defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "desk", value_parser = parse_profile)]
    pub profile: Profile,
    /// Seed of the training sample; the validation sample uses seed + 1.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Greedy stopping tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Estimator steering the greedy selection.
    #[arg(long, global = true, value_parser = parse_estimator)]
    pub estimator: Option<EstimatorKind>,
    /// Output (and model) directory.
    #[arg(long, global = true, default_value = "strb-out")]
    pub out: PathBuf,
    /// Greedy checkpoint to continue from.
    #[arg(long, global = true, value_name = "CHECKPOINT")]
    pub resume: Option<PathBuf>,
    /// Scales the coercivity lower bound (fault injection).
    #[arg(long, global = true, hide = true, default_value_t = 1.0)]
    pub inflate_alpha: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the POD-greedy training and write model files.
    Offline,
    /// Evaluate the reduced model and its certified bound.
    Online {
        /// Parameter as a comma-separated list; repeatable.
        #[arg(long = "mu", value_name = "LIST")]
        mu: Vec<String>,
        /// File with one parameter per line.
        #[arg(long, value_name = "PATH")]
        params: Option<PathBuf>,
    },
    /// Compare estimators with true errors on a validation sample.
    Validate,
    /// Mesh utilities.
    Mesh {
        #[command(subcommand)]
        action: MeshAction,
    },
}

#[derive(Subcommand, Debug)]
enum MeshAction {
    /// Write the configured thermal block mesh in text format.
    Export {
        /// Destination (defaults to <out>/mesh.txt).
        path: Option<PathBuf>,
    },
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_estimator(s: &str) -> Result<EstimatorKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure carrying its process exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::OutOfBounds(_) => 2,
            Error::Io { .. } | Error::Integrity { .. } | Error::Csv(_) => 3,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if !strb_core::exec::set_threads(n) {
            log::warn!("could not configure {n} worker threads");
        }
    }
    let result = match cli.command {
        Command::Offline => commands::offline(&cli.global),
        Command::Online { mu, params } => commands::online(&cli.global, &mu, params.as_deref()),
        Command::Validate => commands::validate(&cli.global),
        Command::Mesh {
            action: MeshAction::Export { path },
        } => commands::mesh_export(&cli.global, path.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
