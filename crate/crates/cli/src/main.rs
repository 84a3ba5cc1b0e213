//! `fepls` command-line interface.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod model_file;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Envelope-based partial least squares for functional data.
#[derive(Debug, Parser, Serialize)]
#[command(name = "fepls", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Fit a model and save it as JSON.
    Fit(FitArgs),
    /// Predict responses for new subjects.
    Predict(PredictArgs),
    /// Pointwise confidence or prediction intervals.
    Interval(IntervalArgs),
    /// BIC table over envelope dimensions.
    SelectDim(SelectDimArgs),
    /// Run a simulation scenario or an experiment.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseKind {
    Functional,
    Vector,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

/// Training data and bases shared by `fit` and `select-dim`.
#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// Functional predictor CSV (repeat for several predictors).
    #[arg(long = "x", required = true)]
    pub x: Vec<PathBuf>,
    /// Response CSV.
    #[arg(long)]
    pub y: PathBuf,
    #[arg(long, value_enum, default_value_t = ResponseKind::Functional)]
    pub response: ResponseKind,
    /// Predictor basis, e.g. `spline:k=5` or `fourier:m=13`; give one for all
    /// predictors or one per predictor.
    #[arg(long = "basis-x", required = true)]
    pub basis_x: Vec<String>,
    /// Response basis for a functional response.
    #[arg(long = "basis-y")]
    pub basis_y: Option<String>,
    /// Ridge penalty for coordinates instead of least squares.
    #[arg(long)]
    pub ridge: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Envelope dimension, or `auto` for BIC.
    #[arg(long, default_value = "auto")]
    pub u: String,
    /// Largest dimension considered by BIC.
    #[arg(long)]
    pub u_max: Option<usize>,
    /// Model JSON to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "x", required = true)]
    pub x: Vec<PathBuf>,
    /// Evaluation points for functional responses in the original units, as
    /// a comma-separated list or `start:stop:step` (default: the training
    /// response grid).
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<Grid>,
    /// Classification threshold for binary responses.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalChoice {
    Confidence,
    Prediction,
    Both,
}

#[derive(Debug, Args, Serialize)]
pub struct IntervalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "x", required = true)]
    pub x: Vec<PathBuf>,
    /// Comma-separated evaluation points in the original units (response
    /// component indices for vector responses).
    #[arg(long, value_delimiter = ',', required = true)]
    pub t0: Vec<f64>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, value_enum, default_value_t = IntervalChoice::Both)]
    pub kind: IntervalChoice,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SelectDimArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub u_max: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Replicated method comparison.
    Table,
    /// Interval coverage.
    Coverage,
    /// Error along a growing-basis schedule.
    Convergence,
    /// Write one simulated dataset as CSV files into the `--out` directory.
    Data,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// `functional_response`, `categorical`, or `vector_response`.
    #[arg(long, default_value = "functional_response")]
    pub scenario: String,
    #[arg(long, value_enum, default_value_t = Experiment::Table)]
    pub experiment: Experiment,
    /// Training sample sizes (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated methods (default: the scenario's standard set).
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long, default_value_t = 5000)]
    pub test_size: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Basis sizes for the convergence schedule (comma-separated, same length as `--n`).
    #[arg(long, value_delimiter = ',')]
    pub m_x: Option<Vec<usize>>,
    /// Convergence experiment without the infinite tail.
    #[arg(long)]
    pub no_tail: bool,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
#[serde(transparent)]
pub struct Grid(pub Vec<f64>);

fn parse_grid(s: &str) -> Result<Grid, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("`{t}` is not a number"));
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, stop, step] = parts[..] else {
            return Err("a range grid is start:stop:step".into());
        };
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if !(step > 0.0) || !(stop >= start) {
            return Err("a range grid needs step > 0 and stop >= start".into());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        return Ok(Grid((0..=count).map(|i| (start + i as f64 * step).min(stop)).collect()));
    }
    s.split(',').map(num).collect::<Result<_, _>>().map(Grid)
}

/// A failure, classified by who has to fix it.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<fepls::error::Error> for CliError {
    fn from(e: fepls::error::Error) -> Self {
        use fepls::error::Error as E;
        match e {
            E::Conditioning(_) => CliError::Internal(e.to_string()),
            other => CliError::User(other.to_string()),
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("FEPLS_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .map_err(|_| CliError::User(format!("FEPLS_THREADS=`{value}` is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Internal(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| commands::run(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            match e {
                CliError::User(_) => ExitCode::from(2),
                CliError::Internal(_) => ExitCode::from(1),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_parse_as_lists_or_ranges() {
        assert_eq!(parse_grid("0.1,0.5").unwrap().0, vec![0.1, 0.5]);
        let g = parse_grid("0:1:0.25").unwrap().0;
        assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_grid("0:1:0.01").unwrap().0.len(), 101);
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("a,b").is_err());
    }
}
