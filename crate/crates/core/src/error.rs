use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(
        "matrix is not positive semidefinite (eigenvalue {min_eigenvalue:e} below -{tolerance:e})"
    )]
    NotPsd { min_eigenvalue: f64, tolerance: f64 },

    #[error("image constraint violated at layer {layer} (relative residual {residual:e})")]
    Constraint { layer: usize, residual: f64 },

    #[error("layer {layer} out of range 1..={max}")]
    LayerOutOfRange { layer: usize, max: usize },

    #[error("training diverged at step {step} (loss {loss:e})")]
    Divergence { step: usize, loss: f64 },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("matrix does not equal the graph Gram matrix E^T E (max deviation {0:e})")]
    GraphMismatch(f64),

    #[error("merge precondition violated: {0}")]
    SignMismatch(String),

    #[error("witness for layer {layer} needs {required} neurons but width is {width}")]
    WidthExceeded {
        layer: usize,
        required: usize,
        width: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
