use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    #[error("{op}: expected {expected}, got {got}")]
    BadShape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {got}")]
    NonScalarLoss { got: String },

    #[error("points lie on manifolds with different curvature ({ka} vs {kb})")]
    CurvatureMismatch { ka: f64, kb: f64 },

    #[error("tangent vector has negative Lorentzian square norm {value}; project it first")]
    NonSpacelikeTangent { value: f64 },

    #[error("{context}: k={k} out of range (need 1 <= k < {n})")]
    EdgeBudgetOutOfRange { context: String, k: usize, n: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    InvalidInput(String),

    #[error("class {class} missing from fold {fold}; use fewer folds")]
    FoldMissingClass { class: usize, fold: usize },

    #[error("AUC undefined: labels contain a single class")]
    AucSingleClass,

    #[error("ablation flags conflict: {0}")]
    AblationConflict(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
