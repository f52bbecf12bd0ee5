use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("layer {index} ({kind}): {source}")]
    Layer {
        index: usize,
        kind: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("graph: {0}")]
    Graph(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
