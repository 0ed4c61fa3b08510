use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("singular linear system")]
    Singular,
    #[error("degenerate implicit measure: every importance weight clamped to zero")]
    DegenerateMeasure,
    #[error("reward not representable: |BR| = {0:e}")]
    RewardNotRepresentable(f64),
    #[error("coincident sample points (zero nearest-neighbour distance)")]
    CoincidentPoints,
    #[error("objective unsatisfiable under estimates: every candidate has infinite divergence")]
    Unsatisfiable,
    #[error("non-finite loss at step {step}: fb={fb} ortho={ortho} critic={critic}")]
    NonFiniteLoss {
        step: usize,
        fb: f64,
        ortho: f64,
        critic: f64,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Contract(msg()))
    }
}
