//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by geometry, voxelization, network, and training code.
#[derive(Debug, Error)]
pub enum Error {
    /// A frame was passed to a lifting routine for the other camera model.
    #[error("wrong camera model: expected {expected}, got {got}")]
    WrongCamera {
        expected: &'static str,
        got: &'static str,
    },

    /// Pixel indices outside the image.
    #[error("pixel out of range: row {row}, col {col} in {width}x{height} image")]
    PixelOutOfRange {
        row: usize,
        col: usize,
        width: usize,
        height: usize,
    },

    /// Attempted to project a point at or behind the camera plane.
    #[error("point is behind the camera: z = {z}")]
    BehindCamera { z: f64 },

    /// An operation that requires data received none.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// Array dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A precondition on argument values was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// `backward` was called with no recorded forward pass.
    #[error("backward called without a recorded forward pass")]
    NoForwardRecorded,

    /// The model was built without the head an operation needs.
    #[error("model has no {0} head")]
    MissingHead(&'static str),

    /// A teacher emitted something that is not a per-pixel distribution.
    #[error("teacher output is not a probability distribution at pixel {pixel}: sum = {sum}")]
    InvalidTeacher { pixel: usize, sum: f64 },

    /// A lifted frame contained no valid depth pixels.
    #[error("cannot build a sample: frame has no valid depth pixels")]
    EmptySample,

    /// Training hit a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    DivergentLoss {
        epoch: usize,
        step: usize,
        loss: f64,
    },

    /// `strip_pretrain_head` was given a checkpoint without the head.
    #[error("checkpoint has no pre-training head entries")]
    NotAPretrainCheckpoint,

    /// Teacher/student parameter maps do not pair up.
    #[error("parameter pairing mismatch: {0}")]
    PairingMismatch(String),

    /// A training protocol precondition failed (e.g. no labeled points).
    #[error("protocol violation: {0}")]
    Protocol(String),

    /// A metric is undefined on the given inputs.
    #[error("metric undefined: no class present in ground truth or prediction")]
    UndefinedMetric,

    /// A binary or text file did not match its format.
    #[error("malformed {format} data: {reason}")]
    Format {
        format: &'static str,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
