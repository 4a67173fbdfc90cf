use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the solver and optimization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter {x} outside the parametric domain [0, 1]")]
    Domain { x: f64 },

    #[error("invalid knot vector: {0}")]
    KnotVector(String),

    #[error("invalid patch: {0}")]
    Patch(String),

    #[error("degenerate geometry in patch {patch} at ({u}, {v}): det DG = {det}")]
    DegenerateGeometry { patch: usize, u: f64, v: f64, det: f64 },

    #[error("non-conforming refinement: {0}")]
    Conformity(String),

    #[error("gluing mismatch on declared interfaces: {0:?}")]
    Gluing(Vec<GluingMismatch>),

    #[error("invalid geometry parameters: {0}")]
    Geometry(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("singular matrix: zero pivot at row {row}")]
    Singular { row: usize },

    #[error("{solver} iteration did not converge at step {step} after {iterations} iterations (last change {last_change:e})")]
    StepFailure { solver: &'static str, step: usize, iterations: usize, last_change: f64 },

    #[error("{solver} produced a non-finite value at step {step}")]
    NonFinite { solver: &'static str, step: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("infeasible shape: {0}")]
    Infeasible(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

/// One offending pair of local dofs on a declared interface.
#[derive(Debug, Clone, PartialEq)]
pub struct GluingMismatch {
    pub a: (usize, usize),
    pub b: (usize, usize),
    pub distance: f64,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
