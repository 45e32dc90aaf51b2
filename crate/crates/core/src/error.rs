use std::path::PathBuf;

/// Every failure signal produced by the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid depth {depth}")]
    InvalidDepth { depth: f64 },
    #[error("pixel ({u}, {v}) is outside the {width}x{height} image")]
    OutOfBounds {
        u: f64,
        v: f64,
        width: usize,
        height: usize,
    },
    #[error("source pixel has no depth")]
    NoDepth,
    #[error("only {found} of {requested} matches survived; resample the image pair")]
    InsufficientOverlap { found: usize, requested: usize },
    #[error("mask is empty")]
    EmptyMask,
    #[error("cross-object pairs need two different objects, got object {0} twice")]
    SameObject(u32),
    #[error("comparison-type weights must be non-negative with a positive sum")]
    InvalidDistribution,
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite gradient in parameter tensor {tensor}")]
    NonFiniteGradient { tensor: usize },
    #[error("match list is empty")]
    NoMatches,
    #[error("search region is empty")]
    EmptySearchRegion,
    #[error("fused point cloud is empty")]
    EmptyCloud,
    #[error("no cloud point within {radius} m of the grasp target")]
    TargetUnreachable { radius: f64 },
    #[error("no collision-free grasp candidate")]
    NoFeasibleGrasp,
    #[error("no valid descriptor match in any test frame")]
    NoMatch,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
