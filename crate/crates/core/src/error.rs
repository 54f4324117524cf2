use thiserror::Error;

pub type Result<T> = std::result::Result<T, SidaError>;

#[derive(Debug, Error)]
pub enum SidaError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("parse error at line {line}, column {column}: cannot read {value:?} as a number")]
    NonNumeric {
        line: usize,
        column: usize,
        value: String,
    },

    #[error("unseen categorical level {0:?}")]
    UnseenLevel(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("matrix is numerically singular (smallest eigenvalue {min_eig:e}, largest {max_eig:e}); use a larger ridge")]
    Singular { min_eig: f64, max_eig: f64 },

    #[error("tau too large: every view's discriminant matrix is zero")]
    TauTooLarge,

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("covariance is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),

    #[error("fold {fold} is missing class {class}")]
    Stratification { fold: usize, class: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SidaError {
    /// Short stable identifier, used by the command-line front end.
    pub fn code(&self) -> &'static str {
        match self {
            SidaError::Parse { .. } | SidaError::NonNumeric { .. } => "parse",
            SidaError::UnseenLevel(_) => "unseen_level",
            SidaError::Validation(_) => "validation",
            SidaError::Dimension(_) => "dimension",
            SidaError::EmptyClass(_) => "empty_class",
            SidaError::Singular { .. } => "singular",
            SidaError::TauTooLarge => "tau_too_large",
            SidaError::Eigen(_) => "eigen",
            SidaError::NotPositiveDefinite(_) => "not_positive_definite",
            SidaError::Stratification { .. } => "stratification",
            SidaError::Io(_) => "io",
            SidaError::Json(_) => "json",
        }
    }

    /// True for failures of the numerical pipeline (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SidaError::Singular { .. }
                | SidaError::TauTooLarge
                | SidaError::Eigen(_)
                | SidaError::NotPositiveDefinite(_)
        )
    }
}
