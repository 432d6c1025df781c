use std::path::PathBuf;

use chrono::NaiveDate;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("category map line {line}: {message}")]
    CategoryMap { line: usize, message: String },

    #[error("series for {unit} is too short: {len} days, need at least {min}")]
    SeriesTooShort { unit: String, len: usize, min: usize },

    #[error("daily series for {unit} does not cover {start}..={end}")]
    WindowNotCovered {
        unit: String,
        start: NaiveDate,
        end: NaiveDate,
    },

    #[error(
        "not enough complete blocks: {pre} pre-intervention (need {min_pre}), {post} post-intervention (need 1)"
    )]
    InsufficientBlocks { pre: usize, post: usize, min_pre: usize },

    #[error("unit {0} is missing from the panel inputs")]
    MissingUnit(String),

    #[error("population for {unit} must be positive, got {population}")]
    BadPopulation { unit: String, population: f64 },

    #[error(
        "weight system is singular at lambda = {lambda:e} (collinear donors); use a positive ridge penalty"
    )]
    SingularWeights { lambda: f64 },

    #[error("every placebo unit was screened out (factor {factor}); no placebo inference possible")]
    AllPlacebosScreened { factor: f64 },

    #[error("p-value {0} is outside [0, 1]")]
    PValueRange(f64),

    #[error("optimizer did not converge after {iterations} iterations: {trace}")]
    NoConvergence { iterations: usize, trace: String },

    #[error("degenerate likelihood: {0}")]
    Degenerate(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(context: impl Into<String>, source: csv::Error) -> Self {
        Error::Csv {
            context: context.into(),
            source,
        }
    }
}
