use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("tensor belongs to a different tape")]
    ForeignTensor,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible transport problem: {0}")]
    Infeasible(String),

    #[error("sinkhorn produced a non-finite scaling vector (epsilon = {epsilon})")]
    SinkhornNan { epsilon: f64 },

    #[error("graph: {0}")]
    Graph(String),

    #[error("numerical underflow at step {step}: {detail}")]
    Underflow { step: usize, detail: String },

    #[error("training aborted at step {step}: non-finite {term}")]
    TrainingAborted { step: usize, term: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        detail: detail.into(),
    })
}

pub(crate) fn domain_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Domain {
        op,
        detail: detail.into(),
    })
}
