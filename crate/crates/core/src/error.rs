use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Shape;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {left} and {right}")]
    DimensionMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("tensor of shape {shape} needs {} values, got {len}", shape.numel())]
    DataLength { shape: Shape, len: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("backward() requires a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),
    #[error("backward() was already run on this tape; call reset() first")]
    BackwardAlreadyRun,
    #[error("variable {0} does not belong to this tape")]
    UnknownVar(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("grid dimensions must be at least 1x1, got {height}x{width}")]
    ZeroDimension { height: usize, width: usize },
    #[error("connectivity must be 4 or 8, got {0}")]
    BadConnectivity(usize),
    #[error("expected {expected} edge weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("edge weight #{index} = {value} is not in (0, 1]")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("edge ({0}, {1}) references a node outside the graph")]
    EdgeOutOfRange(usize, usize),
    #[error("image has {got} bytes, expected {height}x{width}x{channels}")]
    ImageSize {
        height: usize,
        width: usize,
        channels: usize,
        got: usize,
    },
    #[error("channel count must be 1 or 3, got {0}")]
    BadChannels(usize),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad IDX magic at offset {offset}: expected 00 00, found {found:02x} {next:02x}")]
    BadMagic { offset: usize, found: u8, next: u8 },
    #[error("unsupported IDX type code 0x{code:02x} at offset {offset} (only 0x08, unsigned byte)")]
    UnsupportedType { code: u8, offset: usize },
    #[error("unsupported IDX rank {rank} at offset {offset} (1 to 4 supported)")]
    UnsupportedRank { rank: usize, offset: usize },
    #[error("IDX truncated at offset {offset}: expected {expected} bytes, found {found}")]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("IDX has {extra} trailing bytes after payload ending at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("IDX dimension {dim} does not fit in u32")]
    DimensionTooLarge { dim: usize },
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{file}: crc32 mismatch, manifest says {expected}, contents hash to {actual}")]
    Checksum {
        file: String,
        expected: String,
        actual: String,
    },
    #[error("count mismatch: {0}")]
    CountMismatch(String),
    #[error("label {label} at index {index} out of range for {classes} classes")]
    LabelOutOfRange {
        label: u8,
        index: usize,
        classes: usize,
    },
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {label} at index {index} out of range for {classes} classes")]
    LabelOutOfRange {
        label: usize,
        index: usize,
        classes: usize,
    },
    #[error("dataset does not match model: {0}")]
    Mismatch(String),
    #[error("metrics sink: {0}")]
    Sink(#[source] io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("metric input is empty")]
    Empty,
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("score matrix has {rows} rows x {cols} cols but {labels} labels")]
    ScoreShape {
        rows: usize,
        cols: usize,
        labels: usize,
    },
}
