use thiserror::Error;

/// Errors produced while building, factorizing, or evaluating kernel matrices.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point set is empty")]
    EmptyPointSet,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("numerically singular pivot block (box {box_id:?}, level {level:?})")]
    SingularPivot {
        box_id: Option<usize>,
        level: Option<usize>,
    },

    #[error("pivot block is not positive definite (box {box_id:?}, level {level:?})")]
    NotPositiveDefinite {
        box_id: Option<usize>,
        level: Option<usize>,
    },

    #[error("DOF {0} is inactive")]
    InactiveDof(usize),

    #[error("invalid box id {0}")]
    InvalidBox(usize),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operation requires a symmetric positive definite factorization")]
    NotSpd,

    #[error("N = {n} exceeds the dense oracle limit of {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("conjugate gradients broke down at iteration {0} (operator not positive definite)")]
    CgBreakdown(usize),

    #[error("reference field is identically zero; relative error undefined")]
    ZeroField,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed data: {0}")]
    Format(String),
}

impl Error {
    /// Short stable tag for the variant, suitable for scripts parsing CLI output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyPointSet => "empty-point-set",
            Error::InvalidInput(_) => "invalid-input",
            Error::NonFinite(_) => "non-finite",
            Error::SingularPivot { .. } => "singular-pivot",
            Error::NotPositiveDefinite { .. } => "not-positive-definite",
            Error::InactiveDof(_) => "inactive-dof",
            Error::InvalidBox(_) => "invalid-box",
            Error::Invariant(_) => "invariant",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::NotSpd => "not-spd",
            Error::TooLarge { .. } => "too-large",
            Error::CgBreakdown(_) => "cg-breakdown",
            Error::ZeroField => "zero-field",
            Error::Io(_) => "io",
            Error::Format(_) => "format",
        }
    }

    /// Attach the box and level that were being processed to a pivot failure.
    pub fn at_box(self, box_id: usize, level: usize) -> Self {
        match self {
            Error::SingularPivot { .. } => Error::SingularPivot {
                box_id: Some(box_id),
                level: Some(level),
            },
            Error::NotPositiveDefinite { .. } => Error::NotPositiveDefinite {
                box_id: Some(box_id),
                level: Some(level),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
