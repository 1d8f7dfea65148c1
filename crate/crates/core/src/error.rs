use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("config error at line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("scene has no navigable (open-space) points")]
    NoNavigablePoints,

    #[error("scene has no object instances")]
    NoObjects,

    #[error("occupancy grid has no free cells")]
    NoFreeCells,

    #[error("no free cell within {radius} m of ({x:.3}, {z:.3})")]
    SnapFailed { x: f64, z: f64, radius: f64 },

    #[error(
        "no path: start lies in a free component of {start_component} cells, goal in one of {goal_component} cells"
    )]
    NoPath {
        start_component: usize,
        goal_component: usize,
    },

    #[error("planning failed between waypoints {from} and {to}: {source}")]
    Segment {
        from: usize,
        to: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("object placement failed after {attempts} attempts")]
    Placement { attempts: usize },

    #[error("length mismatch: {0}")]
    Mismatch(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("image encoding failed: {0}")]
    Image(String),

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl Error {
    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            already @ Error::Stage { .. } => already,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// True when the root cause is a planning failure.
    pub fn is_planning(&self) -> bool {
        match self {
            Error::NoPath { .. } | Error::SnapFailed { .. } | Error::NoFreeCells => true,
            Error::Segment { .. } => true,
            Error::Stage { source, .. } => source.is_planning(),
            _ => false,
        }
    }

    /// True when the error stems from unreadable or invalid inputs.
    pub fn is_input(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::Format { .. }
            | Error::InvalidScene(_)
            | Error::InvalidTrajectory(_)
            | Error::Config { .. }
            | Error::InvalidParameter(_)
            | Error::Mismatch(_) => true,
            Error::Stage { source, .. } => source.is_input(),
            _ => false,
        }
    }
}
