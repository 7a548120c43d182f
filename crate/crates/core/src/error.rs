use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("basis mismatch: {left} vs {right}")]
    BasisMismatch { left: String, right: String },

    #[error("homological equation has kernel terms: {terms}")]
    KernelTerms { terms: String },

    #[error("invalid model parameter {field}: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    #[error("term count {count} exceeds cap {cap} at order {order}; construction aborted")]
    TermCapExceeded { count: usize, cap: usize, order: usize },

    #[error("quadrature grid did not converge: refinement changed {what} by {delta:.3e} (limit {limit:.1e})")]
    GridConvergence { what: String, delta: f64, limit: f64 },

    #[error("{what} needs at least {min} batches, got {got}")]
    TooFewBatches { what: &'static str, min: usize, got: usize },

    #[error("degenerate variance for {observable}: sigma is statistically zero")]
    DegenerateVariance { observable: String },

    #[error("energy drift {drift:.3e} exceeds {limit:.1e} over the trajectory; reduce dt")]
    EnergyDrift { drift: f64, limit: f64 },
}
