use thiserror::Error;

pub type Result<T> = std::result::Result<T, GratingError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GratingError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("truncation order {order} is below the minimum {min} (under-resolved DtN)")]
    TruncationTooSmall { order: usize, min: usize },

    #[error("boundary traces are built on different mode sets")]
    ModeSetMismatch,

    #[error("mode n = {n} is exactly resonant (|alpha_n| = k)")]
    ResonantMode { n: i64 },

    #[error("flattening map is not injective: margin {margin:.3e} <= 0")]
    InjectivityViolated { margin: f64 },

    #[error("profile too steep: sup|f| = {sup_abs:.4} needs gamma0 >= {needed:.4} but the cap is {cap:.4}")]
    ProfileTooSteep { sup_abs: f64, needed: f64, cap: f64 },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("KL eigenvalue lambda_{index} = {value:.3e} is negative")]
    NonPositiveEigenvalue { index: usize, value: f64 },

    #[error("rejection rate exceeded: {rejected} rejections for {samples} samples")]
    RejectionRateExceeded { rejected: usize, samples: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for GratingError {
    fn from(e: std::io::Error) -> Self {
        GratingError::Io(e.to_string())
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> GratingError {
    GratingError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
