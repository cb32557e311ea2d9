//! Error taxonomy shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A measure or partition violates one of its structural invariants.
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    /// A conditional-expectation cell carries no π-mass.
    #[error("degenerate cell: {0}")]
    DegenerateCell(String),

    /// Two fibred measures do not share a label marginal (the
    /// infinite-transversal-cost situation: the fibred distance is undefined).
    #[error("incomparable marginals: {0}")]
    IncomparableMarginals(String),

    /// Exact OT solver budget exceeded.
    #[error("transport budget exceeded: {got} support points (limit {limit})")]
    BudgetExceeded { got: usize, limit: usize },

    /// A Kantorovich potential failed its 1-Lipschitz certification.
    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    /// Equipartitions require a nonatomic (CDF-form) marginal.
    #[error("nonatomic marginal required: {0}")]
    NonatomicRequired(String),

    /// A state left the admissible domain of a field (e.g. negative
    /// substrate concentration under a strict Michaelis–Menten model).
    #[error("domain error: {0}")]
    Domain(String),

    /// The integrator produced a non-finite or runaway state.
    #[error("numerical blow-up at step {step}: {detail}")]
    BlowUp { step: usize, detail: String },

    /// Picard iteration on the flow operator did not reach tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// Degenerate regression input (e.g. all-zero errors).
    #[error("fit error: {0}")]
    Fit(String),

    /// Anything rejected before computation starts.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Configuration / file-format problems.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code mapping used by the CLI: 1 parse/config, 2 domain
    /// contract violation, 3 numerical blow-up.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) | Error::Io(_) => 1,
            Error::BlowUp { .. } => 3,
            _ => 2,
        }
    }
}
