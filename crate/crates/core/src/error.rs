use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument is outside the domain of a closed form.
    #[error("domain error: {0}")]
    Domain(String),
    /// A caller-supplied argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// Configuration is inconsistent or outside the supported range.
    #[error("configuration error: {0}")]
    Config(String),
    /// Degenerate geometry (coincident or antipodal points).
    #[error("geometry error: {0}")]
    Geometry(String),
    /// No valid route could be produced.
    #[error("routing error for connection {connection}: {reason}")]
    Routing { connection: usize, reason: String },
    /// A route needs a relay in a cell that holds no nodes.
    #[error("cell {cell} is empty (connection {connection})")]
    EmptyCell { connection: usize, cell: usize },
    /// A cell queue exceeded its configured capacity.
    #[error("queue of cell {cell} exceeded its capacity of {cap} packets")]
    QueueOverflow { cell: usize, cap: usize },
    /// A hard invariant (A1 certificate, coloring, conservation, ...) was violated.
    #[error("invariant violated: {0}")]
    Invariant(String),
    /// A verification check was handed input that does not meet its precondition.
    #[error("precondition not met: {0}")]
    Precondition(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Process exit code: 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Toml(_) | Error::Argument(_) | Error::Domain(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
