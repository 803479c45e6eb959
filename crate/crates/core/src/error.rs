use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("qubit {qubit} out of range for a {n_qubits}-qubit register")]
    QubitOutOfRange { qubit: usize, n_qubits: usize },

    #[error("two-qubit gate targets must be distinct (both are {0})")]
    DuplicateTarget(usize),

    #[error("{requested} qubits exceeds the exact-simulation limit of {limit}")]
    TooManyQubits { requested: usize, limit: usize },

    #[error("{name} = {value} is not a probability")]
    InvalidProbability { name: &'static str, value: f64 },

    #[error("distribution sums to {0}, expected 1")]
    NotNormalized(f64),

    #[error("shot count must be positive")]
    ZeroShots,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("coupling map: {0}")]
    Coupling(String),

    #[error("bit-flip tolerance {tolerance} exceeds the {n_qubits}-qubit register")]
    ToleranceTooLarge { tolerance: usize, n_qubits: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line()).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse {
                line,
                message: format!("{other:?}"),
            },
        }
    }
}
