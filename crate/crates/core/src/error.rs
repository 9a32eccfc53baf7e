use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("row index {index} out of range for {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },

    #[error("batch position {position}: row index {index} out of range for {rows} rows")]
    BatchIndexOutOfRange {
        position: usize,
        index: usize,
        rows: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(
        "core {core} cannot be initialised orthogonally: n*R_prev = {needed} exceeds m*R_next = {available}"
    )]
    InfeasibleRanks {
        core: usize,
        needed: usize,
        available: usize,
    },

    #[error("Gram-Schmidt produced a degenerate vector in core {core} after {attempts} attempts")]
    DegenerateGramSchmidt { core: usize, attempts: usize },

    #[error("SVD did not converge within {sweeps} sweeps")]
    SvdNoConvergence { sweeps: usize },

    #[error("materializing {entries} entries exceeds the limit of {limit}")]
    TooLarge { entries: usize, limit: usize },

    #[error("non-finite gradient value in parameter group {group}")]
    NonFiniteGradient { group: usize },

    #[error("graph error: {0}")]
    Graph(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("partitioning error: {0}")]
    Partition(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("split {0} is empty")]
    EmptySplit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
