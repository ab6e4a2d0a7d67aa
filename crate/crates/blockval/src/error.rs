//! Error type shared across the crate.
//!
//! Variants are grouped by how the CLI maps them to exit codes: configuration
//! and validation problems exit with 2, numeric and runtime problems with 3.

use thiserror::Error;

use crate::game::Mask;

#[derive(Debug, Error)]
pub enum Error {
    /// The structure has more blocks than the enumeration cap allows.
    #[error("{blocks} blocks exceed the enumeration cap of {cap} (2^{blocks} subsets)")]
    EnumerationLimit { blocks: usize, cap: usize },

    /// A game structure violated one of its invariants.
    #[error("invalid game structure: {0}")]
    InvalidStructure(String),

    /// A utility table violated one of its invariants (length, v(empty) = 0).
    #[error("invalid utility table: {0}")]
    InvalidTable(String),

    /// An oracle produced a non-finite utility.
    #[error("non-finite utility {value} at subset {mask:?}")]
    NonFiniteUtility { mask: Mask, value: f64 },

    /// Semivalue weights were malformed (wrong length or negative entries).
    #[error("invalid semivalue weights: {0}")]
    InvalidWeights(String),

    /// Beta Shapley parameters must be strictly positive.
    #[error("invalid Beta parameters: alpha = {alpha}, beta = {beta} (both must be > 0)")]
    InvalidBetaParams { alpha: f64, beta: f64 },

    /// A client index outside 0..num_clients.
    #[error("client index {client} out of range (structure has {num_clients} clients)")]
    ClientOutOfRange { client: usize, num_clients: usize },

    /// A subset prior has no mass on any subset consistent with the observation.
    #[error("subset prior has empty support for observation {observed:?}")]
    EmptyPriorSupport { observed: Mask },

    /// A subset prior violated one of its invariants.
    #[error("invalid subset prior: {0}")]
    InvalidPrior(String),

    /// Proportional rewards are undefined when the total value is zero.
    #[error("degenerate allocation: total value is zero under proportional rewards")]
    DegenerateAllocation,

    /// Normalized error is undefined when the truthful vector is all zero.
    #[error("undefined normalization: truthful client values are all zero")]
    UndefinedNormalization,

    /// The linear-form value disagreed with the directly computed metric.
    #[error("coefficient cross-check failed for {metric}: |linear - direct| = {residual:.3e} at {context}")]
    CrossCheckFailed {
        metric: String,
        residual: f64,
        context: String,
    },

    /// Degenerate synthetic-data parameters.
    #[error("invalid dataset parameters: {0}")]
    InvalidDataset(String),

    /// Malformed FL training configuration.
    #[error("invalid FL configuration: {0}")]
    InvalidFlConfig(String),

    /// Training was requested for the empty subset.
    #[error("cannot train on the empty subset")]
    EmptyTrainingMask,

    /// The experiment configuration failed validation.
    #[error("invalid experiment configuration:\n{}", .0.join("\n"))]
    InvalidConfig(Vec<String>),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Exit code the CLI uses for this error: 2 for configuration problems,
    /// 3 for numeric or runtime problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::EnumerationLimit { .. }
            | Error::InvalidStructure(_)
            | Error::InvalidWeights(_)
            | Error::InvalidBetaParams { .. }
            | Error::ClientOutOfRange { .. }
            | Error::InvalidPrior(_)
            | Error::InvalidDataset(_)
            | Error::InvalidFlConfig(_)
            | Error::InvalidConfig(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
