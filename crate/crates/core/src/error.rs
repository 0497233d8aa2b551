use thiserror::Error;

/// Every failure the library can report, tagged with the module it came from.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("expr: syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("expr: unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("expr: periodic variable x{var} used non-periodically at offset {offset}")]
    Periodicity { var: usize, offset: usize },

    #[error("expr: evaluation left the domain at {point:?}")]
    Domain { point: Vec<f64> },

    #[error("expr: expected a point of dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("tree: {0}")]
    InvalidTree(String),

    #[error("tree: negative length {length} on internal edge {edge}")]
    NegativeLength { edge: usize, length: f64 },

    #[error("geometry: degenerate critical point at {point:?} (smallest |eigenvalue| {eigenvalue:e}); function is not Morse")]
    NonMorse { point: Vec<f64>, eigenvalue: f64 },

    #[error("geometry: flow diverged from {start:?} after time {time}")]
    Divergence { start: Vec<f64>, time: f64 },

    #[error("geometry: backward flow from {point:?} left the trust region; membership test inconclusive")]
    Inconclusive { point: Vec<f64> },

    #[error("geometry: invalid argument: {0}")]
    InvalidArgument(String),

    #[error("moduli: {0}")]
    Moduli(String),

    #[error("linearized: {0}")]
    Linearized(String),

    #[error("disk: {0}")]
    Disk(String),

    #[error("config: {path}: {message}")]
    Config { path: String, message: String },

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Module the error originated in, used for structured error records.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Syntax { .. }
            | Error::UnknownIdentifier { .. }
            | Error::Periodicity { .. }
            | Error::Domain { .. }
            | Error::Dimension { .. } => "expr",
            Error::InvalidTree(_) | Error::NegativeLength { .. } => "tree",
            Error::NonMorse { .. }
            | Error::Divergence { .. }
            | Error::Inconclusive { .. }
            | Error::InvalidArgument(_) => "geometry",
            Error::Moduli(_) => "moduli",
            Error::Linearized(_) => "linearized",
            Error::Disk(_) => "disk",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
