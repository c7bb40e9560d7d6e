use thiserror::Error;

pub type Result<T> = std::result::Result<T, PrError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrError {
    /// An observation or support point outside the kernel's domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid support set: {0}")]
    InvalidSupport(String),

    #[error("invalid mixing vector: {0}")]
    InvalidMixing(String),

    #[error("invalid weight schedule: gamma = {0} must lie strictly inside (0.5, 1)")]
    InvalidSchedule(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The predictive density of an observation vanished: the data lie
    /// outside what the fitted support can explain.
    #[error(
        "nondegeneracy failure{}: observation y = {y} has predictive log-density {log_density}",
        step.map(|s| format!(" at step {s}")).unwrap_or_default()
    )]
    Nondegeneracy {
        step: Option<usize>,
        y: f64,
        log_density: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}
