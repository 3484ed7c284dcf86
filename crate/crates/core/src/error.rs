use std::path::PathBuf;

use crate::graph::{Node, VideoId};

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("clock inconsistency: now {now} precedes release time {release_ts} of video {video}")]
    ClockSkew { video: VideoId, now: i64, release_ts: i64 },

    #[error("unknown node {0}")]
    UnknownNode(Node),

    #[error("unknown video {0}")]
    UnknownVideo(VideoId),

    #[error("step {step} out of range for metapath {path} (max {max})")]
    StepOutOfRange { path: &'static str, step: usize, max: usize },

    #[error("metapath walks must start at a video node, got {0}")]
    NotAVideo(Node),

    #[error("video {0} is warm at graph build time; only cold videos are sampled")]
    WarmTarget(VideoId),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension { what: &'static str, expected: usize, got: usize },

    #[error("probability {0} outside the open interval (0, 1)")]
    ProbabilityRange(f64),

    #[error("AUC needs at least one positive and one negative label")]
    SingleClass,

    #[error("RelaImpr is undefined for a base AUC of exactly 0.5")]
    DegenerateBase,

    #[error("non-finite gradient in block `{block}` at coordinate {index}")]
    NonFiniteGradient { block: String, index: usize },

    #[error("schema version mismatch in {what}: file has v{found}, expected v{expected}")]
    SchemaVersion { what: &'static str, found: u32, expected: u32 },

    #[error("shape mismatch for `{block}`: {detail}")]
    Shape { block: String, detail: String },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Net(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }
}
