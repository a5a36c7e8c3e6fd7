use std::path::PathBuf;

/// Errors produced anywhere in the registration stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch {shapes:?}")]
    Shape {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },

    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("backprop needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter `{0}` not found")]
    MissingParam(String),

    #[error("model: {0}")]
    Model(String),

    #[error("training aborted: non-finite loss at iteration {0}")]
    NonFiniteLoss(usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: malformed data at byte {offset}: {msg}")]
    Format {
        context: String,
        offset: usize,
        msg: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, shapes: &[&[usize]]) -> Self {
        Error::Shape {
            op,
            shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(context: impl Into<String>, offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            offset,
            msg: msg.into(),
        }
    }
}
