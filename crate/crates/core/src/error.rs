use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid record for subject(s) {}: {message}", subjects.join(", "))]
    Validation {
        subjects: Vec<String>,
        message: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("guard violated: state `{component}` = {value:e} is not above {lower:e}{}", at_time(*time))]
    Guard {
        component: String,
        value: f64,
        lower: f64,
        time: Option<f64>,
    },

    #[error("design never full rank: the at-risk design is singular at the first event time {time}")]
    DesignNeverFullRank { time: f64 },

    #[error("contract error: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("negative variance for state `{state}` at {} time(s), first at t = {}", times.len(), times.first().copied().unwrap_or(f64::NAN))]
    NegativeVariance { state: String, times: Vec<f64> },

    #[error("all {failed} replication(s) failed: {last}")]
    AllReplicationsFailed { failed: usize, last: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn at_time(time: Option<f64>) -> String {
    match time {
        Some(t) => format!(" (step at t = {t})"),
        None => String::new(),
    }
}

impl Error {
    /// Short machine-readable tag used in the CLI's JSON error objects.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation { .. } => "validation",
            Error::Domain(_) => "domain",
            Error::Guard { .. } => "guard",
            Error::DesignNeverFullRank { .. } => "rank",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::NegativeVariance { .. } => "negative_variance",
            Error::AllReplicationsFailed { .. } => "replications",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
