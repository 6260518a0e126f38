use thiserror::Error;

/// Errors produced by the editing engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        actual: (usize, usize, usize),
    },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("timestep {t} out of range {lo}..={hi}")]
    TimestepOutOfRange { t: usize, lo: usize, hi: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("unknown schedule kind `{0}`")]
    UnknownScheduleKind(String),

    #[error("layout ({row}, {col}) places the glyph outside the {height}x{width} canvas")]
    LayoutOutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("unknown class {0}")]
    UnknownClass(usize),

    #[error("condition {0} excludes every mixture component")]
    InconsistentCondition(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("degenerate latent: {0} has zero norm")]
    DegenerateLatent(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("empty region")]
    EmptyRegion,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
