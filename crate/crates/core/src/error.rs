use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("failed to decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("no face detected in frame {frame_id}")]
    NoFace { frame_id: u64 },

    #[error("{count} faces detected in frame {frame_id}; expected exactly one")]
    MultipleFaces { frame_id: u64, count: usize },

    #[error("invalid landmarks: {0}")]
    Landmarks(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("dataset error: {summary}")]
    Dataset { summary: String, report: Vec<String> },

    #[error("non-finite value in {term}")]
    Numeric { term: String },

    #[error("training aborted at step {step}: non-finite {term}; last good checkpoint: {last_good}")]
    TrainingAbort { step: u64, term: String, last_good: String },

    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage order violation: {0}")]
    StageOrder(String),

    #[error("missing backbone: {0}")]
    MissingBackbone(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Machine-parseable category printed by the command-line tool.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) | Error::CheckpointVersion { .. } | Error::MissingBackbone(_) => "config",
            Error::StageOrder(_) => "stage-order",
            Error::TrainingAbort { .. } | Error::Numeric { .. } => "training-abort",
            Error::CorruptCheckpoint { .. } => "checkpoint",
            Error::Shape { .. } => "shape",
            Error::Decode { .. }
            | Error::EmptyInput(_)
            | Error::NoFace { .. }
            | Error::MultipleFaces { .. }
            | Error::Landmarks(_)
            | Error::Geometry(_)
            | Error::Dataset { .. }
            | Error::Io { .. } => "data",
        }
    }

    /// Process exit code: 2 config, 3 data, 4 training abort, 5 stage order.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" | "checkpoint" => 2,
            "training-abort" => 4,
            "stage-order" => 5,
            _ => 3,
        }
    }
}
