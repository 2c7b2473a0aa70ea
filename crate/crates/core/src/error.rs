use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not Hermitian (max |A - A^H| = {asymmetry:e})")]
    NotHermitian { asymmetry: f64 },

    #[error("matrix must be square and non-empty (got {rows}x{cols})")]
    BadShape { rows: usize, cols: usize },

    #[error("eigensolver did not converge (reconstruction residual {residual:e}, bound {bound:e})")]
    EigenNotConverged { residual: f64, bound: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("observable commutes with the Hamiltonian (max |[H0, O]| = {commutator:e} <= {threshold:e}); the dynamics would be trivial")]
    CommutingObservable { commutator: f64, threshold: f64 },

    #[error("invalid pulse: {0}")]
    InvalidPulse(String),

    #[error("a delta kick has no pointwise value; use the kick propagator instead")]
    DeltaKickPointwise,

    #[error("quadrature did not converge on [{a}, {b}] (estimated error {error:e})")]
    QuadratureNotConverged { a: f64, b: f64, error: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("energy {energy} lies outside the spectrum [{min}, {max}]")]
    EnergyOutOfRange { energy: f64, min: f64, max: f64 },

    #[error("need observable powers up to {required}, only {available} cached")]
    InsufficientPowers { required: usize, available: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("frequency grid [{grid_min}, {grid_max}] does not cover the spectral support; need at least [{need_min}, {need_max}]")]
    GridTooNarrow { grid_min: f64, grid_max: f64, need_min: f64, need_max: f64 },

    #[error("time step {dt} violates the stability gate dt * max|H0| <= 0.1 (max|H0| = {h_max})")]
    UnstableStep { dt: f64, h_max: f64 },

    #[error("cache file {path}: {reason}")]
    Cache { path: PathBuf, reason: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wraps an error with the experiment stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// Bad input (arguments, spec contents, unreadable files) as opposed to a
    /// failure of the numerics.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_usage(),
            Error::InvalidModel(_)
            | Error::InvalidPulse(_)
            | Error::InvalidState(_)
            | Error::InvalidArgument(_)
            | Error::DeltaKickPointwise
            | Error::CommutingObservable { .. }
            | Error::Io(_)
            | Error::Json(_) => true,
            _ => false,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
