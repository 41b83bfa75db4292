use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{function}: argument {value} is outside the domain")]
    Domain { function: &'static str, value: f64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is not symmetric (entry ({row}, {col}))")]
    NotSymmetric { row: usize, col: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("class {0} has no rows")]
    EmptyClass(u32),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("row {row}: every component has zero responsibility")]
    DegenerateRow { row: usize },

    #[error("refusing to prune the last remaining component")]
    LastComponent,

    #[error("component {component}: {message}")]
    Component { component: usize, message: String },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("model document: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures caused by the numbers themselves rather than by the
    /// input files or arguments.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Domain { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::NonFinite(_)
                | Error::DegenerateRow { .. }
                | Error::LastComponent
                | Error::Component { .. }
                | Error::Quadrature(_)
        )
    }
}
