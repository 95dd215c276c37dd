//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    UnsupportedChannels(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("malformed PNM input: {0}")]
    MalformedPnm(String),
    #[error("pixel value {0} outside [0, 1]")]
    PixelOutOfRange(f64),
    #[error("degenerate histogram: all values fall in one bin")]
    DegenerateHistogram,
    #[error("mask has no {0} pixels")]
    SingleClassMask(&'static str),
    #[error("empty foreground after inversion check")]
    EmptyForeground,
    #[error("cannot normalize an all-zero field")]
    ZeroField,
    #[error("degenerate normalization: interpolated tensor has zero norm")]
    DegenerateNorm,
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("infeasible data config: {0}")]
    InfeasibleData(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
