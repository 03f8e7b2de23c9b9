use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("point is not strictly interior (constraint {index} has slack {slack:e})")]
    Infeasible { index: usize, slack: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("no convergence after {iterations} iterations (last residual {residual:e}): {context}")]
    Convergence {
        context: String,
        iterations: usize,
        residual: f64,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("cooling schedule error: {0}")]
    Schedule(String),

    #[error("phase {phase} ratio estimate too noisy (relative standard error {rel_se:.3}); increase the per-phase sample count")]
    PhaseVariance { phase: usize, rel_se: f64 },

    #[error("not enough samples: {0}")]
    TooFewSamples(String),
}

pub type Result<T> = std::result::Result<T, Error>;
