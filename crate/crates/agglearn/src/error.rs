use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
///
/// The CLI maps variants onto exit codes: `InvalidArgument` is a usage
/// error, `Divergence` is a numerical failure, everything else is a data or
/// contract problem with the inputs.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An input violated an ordering or consistency contract, for example
    /// thresholding a report that was already noised.
    #[error("{0}")]
    Contract(String),

    /// A required column is missing from an input CSV.
    #[error("missing column {0:?}")]
    MissingColumn(String),

    /// Malformed content at a known line of a text input.
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    /// A row used a modality index the encoder does not cover.
    #[error("feature {feature}: modality {modality} out of range (cardinality {cardinality})")]
    ModalityOutOfRange {
        feature: usize,
        modality: u64,
        cardinality: u64,
    },

    /// Labels carry no trainable signal (every row in one class).
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    /// Training produced a non-finite parameter.
    #[error("training diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
