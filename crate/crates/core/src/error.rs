use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPsd { eigenvalue: f64 },
    #[error("matrix contains non-finite entries")]
    NonFiniteMatrix,
    #[error("empty data")]
    EmptyData,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("rank {rank} out of range for dimension {dim}")]
    RankOutOfRange { rank: usize, dim: usize },

    #[error("block sizes sum to {sum}, expected dimension {dim}")]
    BlockSizesMismatch { sum: usize, dim: usize },
    #[error("invalid quantization step {0} (must be positive and finite)")]
    InvalidStep(f64),
    #[error("invalid inclusion probability {value} at coordinate {index}")]
    InvalidProbability { index: usize, value: f64 },
    #[error("unknown compressor kind `{0}`")]
    UnknownKind(String),

    #[error("bit budget {beta} too small for {blocks} blocks")]
    BudgetTooSmall { beta: f64, blocks: usize },
    #[error("block {block} has a zero diagonal")]
    DegenerateBlock { block: usize },
    #[error("zero diagonal entry at coordinate {0}")]
    ZeroDiagonal(usize),
    #[error("strong convexity parameter must be positive, got {0}")]
    NonpositiveMu(f64),
    #[error("bit budget must be positive, got {0}")]
    NonpositiveBeta(f64),

    #[error("Elias omega coding is undefined for zero")]
    ZeroInput,
    #[error("quantization level {0} exceeds 2^63")]
    LevelOverflow(u64),
    #[error("magnitude {0} cannot be encoded")]
    NonFiniteMagnitude(f64),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("payload truncated at bit {0}")]
    TruncatedPayload(usize),
    #[error("value {value} out of range [0, {max}]")]
    OutOfRange { value: usize, max: usize },

    #[error("line {line}: malformed line: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: non-numeric value `{token}`")]
    NonNumericValue { line: usize, token: String },
    #[error("line {line}: feature index 0 (indices are 1-based)")]
    IndexZero { line: usize },
    #[error("labels are not binary: found {0} distinct values")]
    NonBinaryLabels(usize),
    #[error("{rows} rows cannot be split across {workers} workers")]
    TooFewRows { rows: usize, workers: usize },
    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },

    #[error("non-finite gradient at iteration {iteration} on worker {worker}")]
    NonfiniteGradient { iteration: usize, worker: usize },
    #[error("alpha {alpha} exceeds 1/(1+omega) = {limit}")]
    AlphaTooLarge { alpha: f64, limit: f64 },
    #[error("step size denominator is zero")]
    ZeroDenominator,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error at `{key}`: {message}")]
    ConfigParse { key: String, message: String },
    #[error("dataset not found: {}", .0.display())]
    DatasetNotFound(PathBuf),
    #[error("no traces to plot")]
    EmptyTraces,
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
