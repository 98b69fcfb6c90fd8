use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("mollifier radius {epsilon} is under-resolved (needs >= {min} and < 0.5)")]
    UnresolvedMollifier { epsilon: f64, min: f64 },

    #[error("synthetic field with {octaves} octaves is not resolvable on {n} points")]
    UnresolvableOctaves { octaves: u32, n: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("noise mode index {j} out of range 1..={len}")]
    ModeOutOfRange { j: usize, len: usize },

    #[error("density bound violated: min rho = {min_rho} (required > {bound})")]
    DensityBound { min_rho: f64, bound: f64 },

    #[error("growth condition '{condition}' violated: {detail}")]
    GrowthCondition {
        condition: &'static str,
        detail: String,
    },

    #[error("pressure solve did not converge in {iterations} iterations (relative residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("blow-up at step {step}: {reason}")]
    BlowUp { step: usize, reason: String },

    #[error("all {0} ensemble paths were flagged")]
    AllPathsFlagged(usize),

    #[error("path is not replayable: {0}")]
    NotReplayable(String),

    #[error("invalid config field '{field}': {reason}")]
    Config { field: String, reason: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("format: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "invalid_grid",
            Error::Shape(_) => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::UnresolvedMollifier { .. } => "unresolved_mollifier",
            Error::UnresolvableOctaves { .. } => "unresolvable_octaves",
            Error::DegenerateFit(_) => "degenerate_fit",
            Error::ModeOutOfRange { .. } => "mode_out_of_range",
            Error::DensityBound { .. } => "density_bound",
            Error::GrowthCondition { .. } => "growth_condition",
            Error::SolverDiverged { .. } => "solver_diverged",
            Error::BlowUp { .. } => "blow_up",
            Error::AllPathsFlagged(_) => "all_paths_flagged",
            Error::NotReplayable(_) => "not_replayable",
            Error::Config { .. } => "invalid_config",
            Error::Io(_) => "io",
            Error::Format(_) => "format",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
