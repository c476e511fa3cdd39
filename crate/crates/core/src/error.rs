use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{0} failed the affinity check")]
    NotAffine(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InnerError {
    #[error("line search found no sufficient-decrease step after {halvings} backtracks (iteration {iteration}, |grad|_inf = {grad_norm:e})")]
    LineSearchFailure {
        iteration: usize,
        halvings: usize,
        grad_norm: f64,
    },
    #[error("objective returned a non-finite value at iteration {iteration}")]
    NonFiniteValue { iteration: usize },
    #[error("invalid options: {0}")]
    InvalidOptions(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("batch {batch}: {source}")]
    Inner {
        batch: usize,
        #[source]
        source: InnerError,
    },
    #[error("worker {worker_id} failed: {cause}")]
    WorkerFailure { worker_id: usize, cause: String },
    #[error("non-finite value in {0}")]
    NonFiniteValue(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{level} loop exceeded {max_iters} iterations")]
    MaxItersExceeded { level: LoopLevel, max_iters: usize },
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Which loop of a nested solver ran out of iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopLevel {
    Outer,
    Middle,
    Admm,
}

impl std::fmt::Display for LoopLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LoopLevel::Outer => "outer",
            LoopLevel::Middle => "middle",
            LoopLevel::Admm => "admm",
        })
    }
}

#[derive(Debug, Error)]
pub enum ZooError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("reference did not converge: {0}")]
    NoConvergence(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Zoo(#[from] ZooError),
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported format version {0}")]
    Version(String),
    #[error("instance hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Zoo(#[from] ZooError),
}
