use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Argument outside the domain of a function (e.g. standard barrier at z >= 0).
    #[error("{op}: argument {value} outside domain")]
    Domain { op: &'static str, value: f64 },

    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },

    #[error("variable does not belong to this tape")]
    ForeignVar,

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("class {class} has vanished: total mass {mass:e} is below guard {guard:e}")]
    DegenerateRegion { class: usize, mass: f64, guard: f64 },

    #[error("invalid constraint: {0}")]
    InvalidSpec(String),

    #[error("constraint {index} left the barrier domain (f = {value})")]
    Infeasible { index: usize, value: f64 },

    #[error("non-finite {term} at epoch {epoch}")]
    NanLoss { term: String, epoch: usize },

    #[error("phase I failed: max constraint value {max_violation} after {iterations} iterations")]
    Phase1Failed {
        max_violation: f64,
        iterations: usize,
    },

    #[error("certification failed: {0}")]
    Certification(String),

    #[error("could not place circles after {attempts} attempts")]
    Placement { attempts: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
