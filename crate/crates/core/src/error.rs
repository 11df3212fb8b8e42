use std::path::PathBuf;

use crate::grid::Kind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("field mismatch: {0}")]
    FieldMismatch(String),

    #[error("Coriolis parameter vanishes at row {row} (f = {f:e})")]
    CoriolisVanishes { row: usize, f: f64 },

    #[error("non-positive layer depth {depth} at {kind:?} point ({i}, {j})")]
    NonPositiveDepth { kind: Kind, i: usize, j: usize, depth: f64 },

    #[error("numerical blow-up in {kind:?} tendency at ({i}, {j})")]
    BlowUp { kind: Kind, i: usize, j: usize },

    #[error("numerical blow-up at step {step}: {source}")]
    BlowUpAtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("ensemble member {member} failed at step {step}: {source}")]
    MemberFailed {
        member: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("kernel {kx}x{ky} does not fit a {nx}x{ny} grid")]
    KernelTooLarge { kx: usize, ky: usize, nx: usize, ny: usize },

    #[error("coarsening factor {c} does not divide grid {nx}x{ny}")]
    NotDivisible { c: usize, nx: usize, ny: usize },

    #[error("too few snapshots: need at least {needed}, got {got}")]
    TooFewSnapshots { needed: usize, got: usize },

    #[error("lag {lag} out of range for series of length {len}")]
    LagOutOfRange { lag: usize, len: usize },

    #[error("decorrelation threshold {alpha} not reached up to lag {max_lag}; profile {profile:?}")]
    DecorrelationNotReached { alpha: f64, max_lag: usize, profile: Vec<f64> },

    #[error("calibration solve did not converge: relative residual {residual:e} after {iterations} iterations (tolerance {tolerance:e})")]
    SolverResidual { residual: f64, iterations: usize, tolerance: f64 },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("relative error undefined: truth field has zero norm")]
    RelativeErrorUndefined,

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("malformed snapshot {path}: {reason}")]
    Snapshot { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures caused by the numerics rather than by inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::CoriolisVanishes { .. }
                | Error::NonPositiveDepth { .. }
                | Error::BlowUp { .. }
                | Error::BlowUpAtStep { .. }
                | Error::MemberFailed { .. }
                | Error::DecorrelationNotReached { .. }
                | Error::SolverResidual { .. }
                | Error::DegenerateData(_)
        )
    }
}
