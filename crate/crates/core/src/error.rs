use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("F = {value} lies outside the schedule domain [0, {l_x}]")]
    ScheduleDomain { value: f64, l_x: f64 },

    #[error("empty kappa window caused by obstacle {obstacle}: lower bound {lower} >= upper bound {upper}")]
    EmptyKappaWindow {
        obstacle: usize,
        lower: f64,
        upper: f64,
    },

    #[error("integration produced a non-finite state")]
    NonFiniteState,

    #[error("prediction produced a non-finite state at knot {knot}")]
    Prediction { knot: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
