use thiserror::Error;

/// Errors raised by operator construction, channel building and estimation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("operator is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("operator is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPositive(f64),

    #[error("trace-preserving constraint violated (max deviation {0:.3e})")]
    NotTracePreserving(f64),

    #[error("Kraus completeness violated (max deviation {0:.3e})")]
    Incomplete(f64),

    #[error("eigensolver did not converge on {dim}x{dim} matrix:\n{dump}")]
    EigenFailure { dim: usize, dump: String },

    #[error("function undefined at eigenvalue {0:.3e}")]
    SpectralDomain(f64),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("unknown channel `{0}`")]
    UnknownChannel(String),

    #[error("invalid probability {value:.3e} at (input {input}, outcome {outcome})")]
    InvalidProbability {
        input: usize,
        outcome: usize,
        value: f64,
    },

    #[error("estimator assigns zero probability to observed outcome (input {input}, outcome {outcome})")]
    ImpossibleData { input: usize, outcome: usize },

    #[error("partial-trace normalizer is singular (min eigenvalue {0:.3e})")]
    SingularNormalizer(f64),

    #[error("SIC overlap relation violated (max deviation {0:.3e})")]
    SicOverlap(f64),

    #[error("fiducial file: {0}")]
    Fiducial(String),

    #[error("all candidate input states repeat previously used ones")]
    RepetitionExhausted,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
