use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("node {node} out of range for graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("communication graph is not connected")]
    Disconnected,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("no agent carries a positive consensus weight; weighted average is undefined")]
    AllPassive,

    #[error("consensus diverged at round {round} (|y| = {magnitude:e})")]
    Diverged { round: usize, magnitude: f64 },

    #[error("singular covariance (determinant {det:e})")]
    SingularCovariance { det: f64 },

    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("artificial column left in basis at level {level}")]
    ArtificialInBasis { level: f64 },

    #[error("fractional basic variable {value} in column ({agent}, {region})")]
    Fractional { agent: usize, region: usize, value: f64 },

    #[error("column sets do not partition the problem: {0}")]
    ColumnPartition(String),

    #[error("pair (A, B) is not controllable over horizon {tau}")]
    Uncontrollable { tau: f64 },

    #[error("time {t} outside control window [{start}, {end}]")]
    OutsideWindow { t: f64, start: f64, end: f64 },

    #[error("unicycle speed {speed:.3e} fell below v_min {v_min} at t = {t:.4}")]
    Singularity { t: f64, speed: f64, v_min: f64 },

    #[error("state diverged during integration at t = {t}")]
    IntegrationDiverged { t: f64 },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Configuration problems (bad scenario, bad graph, bad inputs) as opposed
    /// to numerical failures during a run.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_config(),
            Error::InvalidGraph(_)
            | Error::NodeOutOfRange { .. }
            | Error::Disconnected
            | Error::AllPassive
            | Error::InvalidInput(_)
            | Error::ColumnPartition(_)
            | Error::Scenario(_)
            | Error::Io { .. }
            | Error::Json(_) => true,
            _ => false,
        }
    }
}
