mod commands;
mod manifest;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use uppkit::ErrorKind;

/// Merger screening from revenues, margins and revenue diversion ratios.
#[derive(Debug, Parser, Serialize)]
#[command(name = "uppkit", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: Global,
}

#[derive(Debug, Args, Serialize)]
pub struct Global {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Table)]
    pub format: OutputFormat,
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for stochastic commands.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Suppress notes and the manifest on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Table,
    Csv,
}

#[derive(Debug, Args, Serialize)]
pub struct MarketArgs {
    /// Market file (JSON) or directory holding products.csv and diversion.csv.
    pub market: PathBuf,
    /// Merging firms as `A,B`, overriding the file's merger block.
    #[arg(long, value_name = "A,B")]
    pub merge: Option<String>,
    /// Marginal cost change `c̈` as `PRODUCT=VALUE`, or a bare value for every merging product.
    #[arg(long, value_name = "[PRODUCT=]VALUE", allow_hyphen_values = true)]
    pub efficiency: Vec<String>,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Own-price elasticities and GUPPIs of the merging products.
    Guppi {
        #[command(flatten)]
        market: MarketArgs,
        /// Add comparators that treat revenue diversion as quantity diversion.
        #[arg(long)]
        naive: bool,
    },
    /// Compensating marginal cost reductions.
    Cmcr {
        #[command(flatten)]
        market: MarketArgs,
    },
    /// First-order price effects and welfare changes.
    Welfare {
        #[command(flatten)]
        market: MarketArgs,
        /// Pass-through matrix: the file's choice, the identity, or the CES closed form.
        #[arg(long, value_enum)]
        passthrough: Option<PassthroughChoice>,
        /// Substitution elasticity for the CES pass-through (identified from margins by default).
        #[arg(long)]
        eta: Option<f64>,
    },
    /// CES merger simulation in percentage price changes.
    Simulate {
        #[command(flatten)]
        market: MarketArgs,
        /// Economy file with consumer shares or utilities (defaults to the market's expenditure shares).
        #[arg(long)]
        economy: Option<PathBuf>,
        #[arg(long)]
        eta: Option<f64>,
    },
    /// CES pass-through matrix of two single-product merging firms.
    Passthrough {
        #[command(flatten)]
        market: MarketArgs,
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Diversion after removing a product from every consideration set.
    SecondChoice {
        /// Economy file.
        economy: PathBuf,
        /// Product to remove.
        #[arg(long)]
        remove: String,
    },
    /// Nested-CES fit of utility coefficients and the nesting parameter to store revenues.
    Fit {
        /// Fit data (JSON): consumers with covariates, nests and observed revenues.
        #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
        input: Option<PathBuf>,
        /// Fit a generated geography with known parameters instead.
        #[arg(long)]
        synthetic: bool,
        #[arg(long, value_enum, default_value_t = WeightingChoice::Unweighted)]
        weighting: WeightingChoice,
        /// Hold the nesting parameter at this value.
        #[arg(long)]
        fix_mu: Option<f64>,
    },
    /// Monte-Carlo accuracy of GUPPI on synthetic markets.
    Harness {
        #[arg(long, value_enum, default_value_t = ModelChoice::Ces)]
        model: ModelChoice,
        /// Number of markets.
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// CES consumers per market.
        #[arg(long, default_value_t = 1)]
        consumers: usize,
        /// Also write the per-trial CSV here.
        #[arg(long)]
        trials: Option<PathBuf>,
    },
    /// Check a market file and report every violation.
    Validate {
        #[command(flatten)]
        market: MarketArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PassthroughChoice {
    Identity,
    Ces,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingChoice {
    Unweighted,
    Revenue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Ces,
    Logit,
}

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_NONCONVERGENCE: u8 = 3;
pub const EXIT_IO: u8 = 4;

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.global.quiet {
            log::LevelFilter::Error
        } else {
            log::LevelFilter::Warn
        })
        .parse_env("UPPKIT_LOG")
        .init();
    match commands::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Validation => EXIT_VALIDATION,
                ErrorKind::NonConvergence => EXIT_NONCONVERGENCE,
                ErrorKind::Io => EXIT_IO,
            })
        }
    }
}
