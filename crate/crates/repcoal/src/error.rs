use crate::rat::Q;

pub type Result<T> = std::result::Result<T, Error>;

/// Library-wide error type. Domain failures carry enough context to be
/// rendered as machine-readable error objects by the CLI layer.
#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("invalid game: {0}")]
    InvalidGame(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("equivalent utilities: v_{i} = {k} + {lambda} * v_{j} across all alternatives")]
    EquivalentUtilities { i: usize, j: usize, k: Q, lambda: Q },

    #[error("target not in {set}: {detail}")]
    NotInSet { set: String, detail: String },

    #[error("{set} is empty")]
    EmptySet { set: String },

    #[error("no punishment vectors found: {0}")]
    NoPunishments(String),

    #[error("no feasible kappa on the grid: {0}")]
    KappaNotFound(String),

    #[error("delta too small: {0}")]
    DeltaTooSmall(String),

    #[error("linear program unbounded: {0}")]
    LpUnbounded(String),

    #[error("secrecy measurability violation: {0}")]
    Measurability(String),

    #[error("simple game is not collegial (no veto players)")]
    NonCollegial,

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    /// Stable machine-readable code for report error objects.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidGame(_) => "invalid_game",
            Error::InvalidInput(_) => "invalid_input",
            Error::EquivalentUtilities { .. } => "equivalent_utilities",
            Error::NotInSet { .. } => "target_not_in_set",
            Error::EmptySet { .. } => "empty_set",
            Error::NoPunishments(_) => "no_punishments",
            Error::KappaNotFound(_) => "kappa_not_found",
            Error::DeltaTooSmall(_) => "delta_too_small",
            Error::LpUnbounded(_) => "lp_unbounded",
            Error::Measurability(_) => "measurability_violation",
            Error::NonCollegial => "non_collegial",
            Error::Unsupported(_) => "unsupported",
            Error::Serialization(_) => "serialization",
        }
    }
}
