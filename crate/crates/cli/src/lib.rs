//! The `statediff` command line: data generation, training, sampling, bound
//! verification and gradient checks, all driven by one TOML config and one
//! root seed.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 numerical failure
//! (non-finite loss, failed gradient check), 3 a bound was violated.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_VIOLATION: i32 = 3;

/// Relative error the gradient check must stay under.
pub const GRADCHECK_TOL: f64 = 1e-5;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::config(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<statediff::Error> for CliError {
    fn from(e: statediff::Error) -> Self {
        let code = match e {
            statediff::Error::NonFinite { .. } => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "statediff", version, about = "Latent diffusion for inferring hidden global state")]
pub struct Cli {
    /// TOML run config; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed, overriding the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a JSON Lines dataset.
    GenData {
        /// Default: <out_dir>/data.jsonl
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model; also writes <out>.history.csv.
    Train {
        /// Dataset to train on. Default: <out_dir>/data.jsonl
        #[arg(long)]
        data: Option<PathBuf>,
        /// Default: <out_dir>/model.ckpt
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw samples at given conditions; also writes <out>.hist.csv.
    Sample {
        /// Default: <out_dir>/model.ckpt
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// JSON Lines of {"x":[...]}; default: the config's `sample_x`.
        #[arg(long)]
        x: Option<PathBuf>,
        /// Samples per condition; default: the config's `n_samples`.
        #[arg(long)]
        n: Option<usize>,
        /// Default: <out_dir>/samples.jsonl
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the error bounds for a trained model; writes <out>.csv and
    /// <out>.txt.
    VerifyBounds {
        /// Default: <out_dir>/model.ckpt
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Default: <out_dir>/bounds
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(CliError::config)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let cfg = load_config(cli)?;
    let default = |name: &str| cfg.out_dir.join(name);
    match &cli.command {
        Command::GenData { out } => {
            let out = out.clone().unwrap_or_else(|| default("data.jsonl"));
            let data = commands::gen_data(&cfg, &out)?;
            println!("wrote {} pairs to {}", data.len(), out.display());
        }
        Command::Train { data, out } => {
            let data_path = data.clone().unwrap_or_else(|| default("data.jsonl"));
            let out = out.clone().unwrap_or_else(|| default("model.ckpt"));
            let data = commands::load_dataset(&data_path)?;
            let (_, history) = commands::train(&cfg, &data, &out)?;
            if let Some(last) = history.last() {
                println!(
                    "epoch {}: mse {:.6}, kl {:.6}, total {:.6}",
                    last.epoch, last.mse, last.kl, last.total
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Sample { checkpoint, x, n, out } => {
            let ckpt = checkpoint.clone().unwrap_or_else(|| default("model.ckpt"));
            let out = out.clone().unwrap_or_else(|| default("samples.jsonl"));
            let model = commands::load_model(&ckpt)?;
            let xs = match x {
                Some(path) => commands::read_conditions(path)?,
                None => cfg.sample_x.clone(),
            };
            let records = commands::sample_conditions(&model, &xs, n.unwrap_or(cfg.n_samples), cfg.seed)?;
            commands::write_samples(&records, &cfg, &out)?;
            println!("wrote samples for {} conditions to {}", records.len(), out.display());
        }
        Command::VerifyBounds { checkpoint, out } => {
            let ckpt = checkpoint.clone().unwrap_or_else(|| default("model.ckpt"));
            let out = out.clone().unwrap_or_else(|| default("bounds"));
            let model = commands::load_model(&ckpt)?;
            let report = commands::verify_bounds(&cfg, &model)?;
            commands::write_report(&report, &model, &out)?;
            print!("{}", report.text());
            if !report.violations().is_empty() {
                return Ok(EXIT_VIOLATION);
            }
        }
        Command::Gradcheck => {
            let outcome = commands::gradcheck(&cfg, cfg.seed)?;
            let mut ok = true;
            for (name, report) in [("network", &outcome.network), ("loss", &outcome.loss)] {
                let pass = report.passed(GRADCHECK_TOL);
                ok &= pass;
                println!(
                    "{name}: {} parameters, max relative error {:.3e} ({})",
                    report.checked(),
                    report.max_rel_err(),
                    if pass { "pass" } else { "FAIL" }
                );
            }
            if !ok {
                return Ok(EXIT_NUMERIC);
            }
        }
    }
    Ok(EXIT_OK)
}

/// Parses `args` (program name first) and runs the command, returning the
/// exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
