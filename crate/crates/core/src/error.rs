use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix must have at least one row and one column")]
    EmptyMatrix,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("matrix is rank deficient (smallest singular value {smallest:e} <= tolerance {tol:e})")]
    RankDeficient { smallest: f64, tol: f64 },
    #[error("eigenvalue iteration did not converge")]
    ConvergenceFailure,
    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("requested time {t} is outside [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("reservoir initialization failed after {attempts} draws: {reason}")]
    InitFailure { attempts: u32, reason: String },
    #[error("operation requires a linear reservoir")]
    NotLinear,
    #[error("operation requires a tanh reservoir")]
    NotTanh,

    #[error("time grids do not overlap")]
    GridMismatch,

    #[error("degenerate bias scalar s = {s:e} (tolerance {tol:e})")]
    DegenerateS { s: f64, tol: f64 },
    #[error("input snapshot matrix U is rank deficient (rank {rank}, need {needed})")]
    RankDeficientU { rank: usize, needed: usize },
    #[error("square-data formula requires d = m (got d = {d}, m = {m})")]
    NotSquare { d: usize, m: usize },
    #[error("neither square-data variant matches the pipeline (printed {printed:e}, proof-implied {proof_implied:e})")]
    NoVariantMatches { printed: f64, proof_implied: f64 },
    #[error("zero vector cannot be normalized")]
    ZeroVector,
    #[error("only {unperturbed} unperturbed eigenvalues found, expected at least {expected}")]
    SplitViolation { unperturbed: usize, expected: usize },

    #[error("eigenvalue on the rate boundary: no strict split at rate {rate}")]
    SplitFailure { rate: f64 },
    #[error("eigenvector matrix is ill-conditioned (condition number {cond:e})")]
    IllConditioned { cond: f64 },
    #[error("no states or synthetic samples to check")]
    EmptySamples,

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("channel {channel} out of range for {d} input channels")]
    BadChannel { channel: usize, d: usize },
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
