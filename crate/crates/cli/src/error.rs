use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const INPUT: i32 = 2;
    pub const WARNINGS: i32 = 3;
    pub const NUMERIC: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] bayes_actor::Error),

    #[error("{0}")]
    Input(String),

    #[error("no action solver for {family}: pass --network <checkpoint> or use the oracle")]
    MissingNetwork { family: bayes_actor::actor::CostFamily },

    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("strict mode: {0} warning(s) raised")]
    Warnings(usize),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        use bayes_actor::Error as E;
        match self {
            CliError::Input(_) | CliError::MissingNetwork { .. } | CliError::Config { .. } => exit::INPUT,
            CliError::Warnings(_) => exit::WARNINGS,
            CliError::Io { .. } => exit::OTHER,
            CliError::Core(e) => match e {
                E::Domain { .. }
                | E::FamilyMismatch { .. }
                | E::EmptyDataset
                | E::Malformed { .. }
                | E::Config(_)
                | E::Checkpoint(_)
                | E::Csv(_)
                | E::Json(_) => exit::INPUT,
                E::NonFiniteLoss { .. }
                | E::NoConvergence { .. }
                | E::EvaluationEntry { .. }
                | E::InsufficientDraws { .. }
                | E::Initialization { .. } => exit::NUMERIC,
                E::Io(_) => exit::OTHER,
            },
        }
    }
}
