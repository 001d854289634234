use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Iteration report attached to solver failures.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverDiagnostic {
    pub solver: &'static str,
    pub iterations: usize,
    pub residual: f64,
    pub detail: String,
}

impl std::fmt::Display for SolverDiagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} stopped after {} iterations with relative residual {:.3e}",
            self.solver, self.iterations, self.residual
        )?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid coefficient data: {0}")]
    Coefficient(String),

    #[error("solver failure: {0}")]
    Solver(SolverDiagnostic),

    #[error("spectral gap not resolved: {0}")]
    GapNotResolved(String),

    #[error("cell load violates the solvability condition: defect {defect:.3e} > {tolerance:.3e}")]
    Solvability { defect: f64, tolerance: f64 },

    #[error(
        "flux is not orthogonal to W: reconstruction residual {residual:.3e}, |P_W eta| = {w_component:.3e}"
    )]
    Decomposition { residual: f64, w_component: f64 },

    #[error("matrix is not positive definite: pivot {pivot:.3e} at {block}")]
    NotPositiveDefinite { pivot: f64, block: String },

    #[error("misuse: {0}")]
    Misuse(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("missing cached artifact {artifact}; run the `{stage}` stage first")]
    MissingCache { artifact: String, stage: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
