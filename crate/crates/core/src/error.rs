use thiserror::Error;

/// Errors raised by the correspondence pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("non-manifold edge ({a}, {b}) shared by {count} faces")]
    NonManifold { a: usize, b: usize, count: usize },

    #[error("degenerate face {0}")]
    DegenerateFace(usize),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("mesh is disconnected: vertex {0} is unreachable")]
    DisconnectedMesh(usize),

    #[error("eigensolver failed to converge: {0}")]
    Convergence(String),

    #[error("zero eigenvalue has multiplicity {0} (mesh has {0} connected components)")]
    FirstEigenvalue(usize),

    #[error("inhibition gain at index {0} underflows")]
    GainUnderflow(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular system in row {row} (condition number {condition:e})")]
    SingularSystem { row: usize, condition: f64 },

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("feature channel {0} has zero variance")]
    DeadChannel(usize),

    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad container: {0}")]
    Format(String),

    #[error("{stage}: {source}")]
    Stage { stage: &'static str, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the failure is numerical (as opposed to bad input or configuration).
    pub fn is_numerical(&self) -> bool {
        if let Error::Stage { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            Error::Numerical(_)
                | Error::Convergence(_)
                | Error::GainUnderflow(_)
                | Error::SingularSystem { .. }
                | Error::NonFiniteLoss(_)
        )
    }
}

/// Tags errors from one stage of a multi-stage computation.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage { stage, source: Box::new(e) })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
