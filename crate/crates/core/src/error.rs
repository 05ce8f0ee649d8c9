use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation was called outside its domain, e.g. evaluating a packet
    /// before it was born.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// The sampled domain of the spectral propagator is too small: mass
    /// reached the periodic boundary.
    #[error("domain too small: edge mass {edge_mass:e} exceeds {limit:e}")]
    DomainTooSmall { edge_mass: f64, limit: f64 },

    #[error("unknown scenario `{0}` (expected one of BE, ME, CE, ABE, AME, ACE or a scenario file)")]
    UnknownScenario(String),

    #[error("run {run}: {source}")]
    Run {
        run: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("replay mismatch at run {run}: recorded {recorded}, replayed {replayed}")]
    ReplayMismatch {
        run: u64,
        recorded: String,
        replayed: String,
    },

    #[error("command rejected: {0}")]
    Rejected(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn precondition(msg: impl Into<String>) -> Error {
    Error::Precondition(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
