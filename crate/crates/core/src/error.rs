use std::path::PathBuf;

use crate::simulation::Trajectory;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid edge ({0}, {1}): {2}")]
    InvalidEdge(usize, usize, &'static str),

    #[error("graph is not connected (smallest nonzero Laplacian eigenvalue {0:.3e})")]
    NotConnected(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid gain: {0}")]
    InvalidGain(String),

    #[error("non-finite value encountered at t = {t}")]
    NumericalBlowup {
        t: f64,
        /// Trajectory recorded up to the last finite state, when available.
        partial: Option<Box<Trajectory>>,
    },

    #[error("step size {dt} exceeds stiffness limit {limit} = 0.5/(k*lambda_N)")]
    StiffnessGuard { dt: f64, limit: f64 },

    #[error("window of {window} s is longer than the series ({span} s)")]
    WindowTooLong { window: f64, span: f64 },

    #[error("window spans {0} grid steps; at least 10 are required")]
    WindowTooShort(usize),

    #[error("log-linear fit needs positive samples; got {0} at t = {1}")]
    FitDomain(f64, f64),

    #[error("P-matrix tail bound {tail:.3e} exceeds {limit:.3e}; extend the horizon")]
    TailTooLarge { tail: f64, limit: f64 },

    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("empty signal selection")]
    EmptySelection,

    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {msg}")]
    Csv { path: PathBuf, msg: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
