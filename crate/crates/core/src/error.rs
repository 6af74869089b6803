use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse grouping of errors, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input, bad configuration or a violated data contract.
    Validation,
    /// A stratum (or the whole cohort) lacks one of the two exposure arms.
    Positivity,
    /// A numerical routine failed (rank deficiency, non-convergence, ...).
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("structural positivity violated in stratum '{stratum}': {detail}")]
    Positivity { stratum: String, detail: String },

    #[error("design spec error: {0}")]
    Spec(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate response: {0}")]
    DegenerateResponse(String),

    #[error("model unestimable: {n} observations for {p} parameters; simplify the design for this stratum")]
    Unestimable { n: usize, p: usize },

    #[error("rank-deficient design, collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("IRLS did not converge after {iterations} iterations (last deviance {deviance})")]
    NonConvergence {
        iterations: usize,
        deviance: f64,
        last_coefficients: Vec<f64>,
    },

    #[error("missing outcome for ids: {}", ids.join(", "))]
    MissingOutcome { ids: Vec<String> },

    #[error("bootstrap unstable: {failures} of {total} resamples failed")]
    BootstrapUnstable { failures: usize, total: usize },

    #[error("stratum '{stratum}': {source}")]
    InStratum {
        stratum: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Positivity { .. } | Error::DegenerateResponse(_) => ErrorClass::Positivity,
            Error::Unestimable { .. }
            | Error::RankDeficient { .. }
            | Error::NonConvergence { .. }
            | Error::BootstrapUnstable { .. }
            | Error::Domain(_) => ErrorClass::Numerical,
            Error::InStratum { source, .. } => source.class(),
            _ => ErrorClass::Validation,
        }
    }

    pub(crate) fn in_stratum(stratum: &str, err: Error) -> Error {
        Error::InStratum {
            stratum: stratum.to_string(),
            source: Box::new(err),
        }
    }
}
