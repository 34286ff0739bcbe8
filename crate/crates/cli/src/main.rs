//! `lls`: simulate, estimate, evaluate, rank-scan and check-id.
//!
//! Exit codes: 0 success, 2 input error, 3 model-condition error.
//! `LLS_THREADS` caps the worker threads. Flags override config files.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lls_core::LlsError;

#[derive(Debug)]
pub enum CliError {
    /// Bad or inconsistent input files and flags.
    Input(String),
    /// The data or model violates a condition of the method.
    Model(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Input(_) => 2,
            Self::Model(_) => 3,
        }
    }
}

impl From<LlsError> for CliError {
    fn from(e: LlsError) -> Self {
        use LlsError::*;
        match e {
            InvalidSchema(_)
            | SchemaMismatch(_)
            | Precondition(_)
            | Parse { .. }
            | CategoryOutOfRange { .. }
            | NoRows
            | InvalidConfig(_)
            | NonFiniteSupport
            | Io(_) => Self::Input(e.to_string()),
            _ => Self::Model(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "lls", version, about = "Linear latent structure analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AveragingArg {
    Precision,
    Uniform,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic dataset from a JSON model configuration.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the configured number of individuals.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit the subspace, solve for every individual, restore the mixing.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        hist_lo: f64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        hist_hi: f64,
        #[arg(long, default_value_t = 1)]
        col_support: usize,
        #[arg(long, value_enum, default_value_t = AveragingArg::Precision)]
        averaging: AveragingArg,
        /// Run even if K exceeds the identifiability bound.
        #[arg(long)]
        force: bool,
    },
    /// Compare an estimate with the simulated truth.
    Evaluate {
        /// Directory written by `estimate`.
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        latent: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        bins: usize,
    },
    /// Masked-fit residual and identifiability for a range of K.
    RankScan {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// Inclusive range `lo:hi`, or a single value.
        #[arg(long, default_value = "1:4")]
        k_range: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        col_support: usize,
    },
    /// Print the identifiability verdict for a schema and K.
    CheckId {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("LLS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("LLS_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Input(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Simulate { config, out, seed, n } => commands::simulate(&config, &out, seed, n),
        Command::Estimate {
            data,
            schema,
            k,
            out,
            bins,
            hist_lo,
            hist_hi,
            col_support,
            averaging,
            force,
        } => commands::estimate(&commands::EstimateArgs {
            data,
            schema,
            k,
            out,
            bins,
            range: (hist_lo, hist_hi),
            col_support,
            averaging,
            force,
        }),
        Command::Evaluate {
            estimate,
            latent,
            truth,
            out,
            bins,
        } => commands::evaluate(&estimate, &latent, &truth, &out, bins),
        Command::RankScan {
            data,
            schema,
            k_range,
            out,
            col_support,
        } => commands::rank_scan(&data, &schema, &k_range, &out, col_support),
        Command::CheckId { schema, k, out } => commands::check_id(&schema, k, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Input(m) => eprintln!("error: {m}"),
                CliError::Model(m) => eprintln!("model error: {m}"),
            }
            ExitCode::from(e.code())
        }
    }
}
