use thiserror::Error;

use crate::scm::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidSpec(ValidationReport),

    #[error("unsupported for exact enumeration: {0}")]
    Unsupported(String),

    #[error("no individuals fell in stratum {stratum} ({description}) while deriving the mediator policy")]
    EmptyStratum { stratum: u32, description: String },

    #[error("stratification yields {count} strata, above the budget of {budget}")]
    StratumBudget { count: usize, budget: usize },

    #[error("mediator policy of kind {0} has not been materialized into transition tables")]
    UnmaterializedPolicy(String),

    #[error("invalid mediator policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid mediator profile: {0}")]
    InvalidProfile(String),

    #[error("estimand undefined: P(Z2_tau = 1) is zero in {arm}")]
    UndefinedEstimand { arm: String },

    #[error("positivity violated: {}", .strata.join("; "))]
    Positivity { strata: Vec<String> },

    #[error("policy has no transition entry for {0}")]
    MissingPolicyEntry(String),

    #[error("dataset row {row}: {rule}")]
    Dataset { row: usize, rule: String },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown name {0:?}")]
    UnknownName(String),

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable category, used in run reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidSpec(_) => "invalid_spec",
            Error::Unsupported(_) => "unsupported",
            Error::EmptyStratum { .. } => "empty_stratum",
            Error::StratumBudget { .. } => "stratum_budget",
            Error::UnmaterializedPolicy(_) => "unmaterialized_policy",
            Error::InvalidPolicy(_) => "invalid_policy",
            Error::InvalidProfile(_) => "invalid_profile",
            Error::UndefinedEstimand { .. } => "undefined_estimand",
            Error::Positivity { .. } => "positivity",
            Error::MissingPolicyEntry(_) => "missing_policy_entry",
            Error::Dataset { .. } => "dataset",
            Error::Parse { .. } => "parse",
            Error::UnknownName(_) => "unknown_name",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
