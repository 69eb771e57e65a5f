use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("newick syntax error at byte {pos}: {msg}")]
    Newick { pos: usize, msg: String },

    #[error("unknown leaf label `{0}`")]
    UnknownLabel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("covariance is not positive definite: leaves `{0}` and `{1}` are not separated")]
    SingularCovariance(String, String),

    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),

    #[error("too few samples: {0}")]
    InsufficientSamples(String),

    #[error("attach point could not be drawn after {0} redraws")]
    ProposalFailure(usize),

    #[error("series is constant")]
    ConstantSeries,

    #[error("ingest: {0}")]
    Ingest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
