use thiserror::Error;

/// Errors raised by the toolkit.
///
/// Variants are grouped by [`ErrorClass`] so front ends can map them onto
/// distinct exit statuses.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum HawkesError {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("kernel is not integrable: {0}")]
    NonIntegrable(String),

    #[error("outside the domain of convergence: {0}")]
    Domain(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("model is unstable (spectral radius {radius})")]
    Unstable { radius: f64 },

    #[error("model is too close to criticality (spectral radius {radius}); {detail}")]
    NearCritical { radius: f64, detail: String },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("required resolution exceeds configured maximum: {0}")]
    Resolution(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("simulation exploded after {count} events")]
    Explosion { count: usize },

    #[error("unsupported kernel family: {0}")]
    UnsupportedFamily(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("ill-conditioned system (condition number {cond:.3e}); {hint}")]
    Conditioning { cond: f64, hint: String },

    #[error("not identifiable: {0}")]
    Identifiability(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

/// Coarse classification of failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad arguments or configuration.
    Usage,
    /// Bad or insufficient input data.
    Data,
    /// Numerical failure (instability, conditioning, explosion).
    Numerical,
}

impl HawkesError {
    pub fn class(&self) -> ErrorClass {
        use HawkesError::*;
        match self {
            InvalidKernel(_) | InvalidModel(_) | UnsupportedFamily(_) | Domain(_) => ErrorClass::Usage,
            Input(_) | DegenerateData(_) | InsufficientData(_) | Parse { .. } | Io(_)
            | Identifiability(_) => ErrorClass::Data,
            NonIntegrable(_) | Unstable { .. } | NearCritical { .. } | Singular(_)
            | Resolution(_) | Explosion { .. } | Conditioning { .. } => ErrorClass::Numerical,
        }
    }
}

impl From<std::io::Error> for HawkesError {
    fn from(e: std::io::Error) -> Self {
        HawkesError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HawkesError>;
