//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bandwidth must be positive, got {0}")]
    BadBandwidth(f64),
    #[error("unit {unit}: no observations carry kernel weight at grid point t = {t}")]
    EmptyWindow { unit: usize, t: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("eigen decomposition failed: {0}")]
    EigenFailure(String),
    #[error("all eigenvalues are zero; variance-based truncation is undefined")]
    AllZeroSpectrum,
    #[error("rook lattice needs at least two cells, got {rows}x{cols}")]
    DegenerateGrid { rows: usize, cols: usize },
    #[error("units {0} and {1} share a location; inverse-distance weight undefined")]
    DuplicateLocation(usize, usize),
    #[error("k = {k} outside the valid neighbour range 1..={max}")]
    BadK { k: usize, max: usize },
    #[error("log-determinant factor singular at eigenvalue index {0}")]
    SingularFactor(usize),
    #[error("response vector is constant")]
    ConstantVector,
    #[error("weight matrix has zero total weight")]
    EmptyWeights,
    #[error("need at least 99 permutations, got {0}")]
    TooFewPermutations(usize),
    #[error("design matrix is rank deficient (min/max singular value ratio {0:.3e})")]
    RankDeficientDesign(f64),
    #[error("residual variance {0:.3e} is below tolerance; profile likelihood degenerate")]
    DegenerateVariance(f64),
    #[error("linear system (I - rho W) is singular")]
    SingularSystem,
    #[error("marginal-likelihood integrand is non-finite at rho = {0}")]
    NonfiniteIntegrand(f64),
    #[error("weights must be row-normalized before this operation")]
    NotNormalized,
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("reference candidate (m = {m}, weights = {weights_id}) not among the candidates")]
    ReferenceNotFound { m: usize, weights_id: String },
    #[error("invalid input: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: u64, msg: String },
    #[error("fit file missing or malformed field `{0}`")]
    Schema(String),
}

impl Error {
    /// True for errors caused by unreadable or ill-formed inputs rather
    /// than by a numerical failure during computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Parse { .. } | Error::Schema(_) | Error::InvalidConfig(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
