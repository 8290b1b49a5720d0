use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by tensor math, models and training.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("tensor of shape {shape:?} needs {expected} values, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("graph node {node} refers to an input that does not precede it")]
    Cycle { node: usize },
    #[error("unknown graph node {0}")]
    UnknownNode(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parameter {name:?}: {reason}")]
    Param { name: String, reason: String },
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("class {class} has {available} samples, {needed} required")]
    InsufficientSamples {
        class: usize,
        needed: usize,
        available: usize,
    },
    #[error("confusion matrix has no samples")]
    EmptyConfusion,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
