use thiserror::Error;

/// Failures raised while recording or differentiating a tape.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TapeError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: argument outside the domain ({detail})")]
    Domain { op: &'static str, detail: String },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    BadLength { shape: Vec<usize>, len: usize },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: index {index} out of range for extent {extent}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tape has already been differentiated; record a new tape")]
    AlreadyDifferentiated,
    #[error("variable belongs to a different tape")]
    ForeignVar,
}
