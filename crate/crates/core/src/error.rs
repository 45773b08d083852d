use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown lattice kind `{0}`")]
    UnknownKind(String),

    #[error("lattice length {0} is too small (need L >= 2)")]
    LengthTooSmall(usize),

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operation not supported for lattice kind `{0}`")]
    UnsupportedKind(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not Hermitian (deviation {0:e})")]
    NotHermitian(f64),

    #[error("resample budget of {budget} exhausted ({what})")]
    ResampleBudget { what: String, budget: usize },

    #[error("need at least {need} usable points for a fit, got {got}")]
    TooFewPoints { need: usize, got: usize },

    #[error("resonant denominator on {site} site (|eps - delta| = {gap:e})")]
    Resonance { site: char, gap: f64 },

    #[error("undefined observable: {0}")]
    Undefined(String),
}

pub type Result<T> = std::result::Result<T, Error>;
