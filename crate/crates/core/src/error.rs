use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("matrix size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty edge set")]
    EmptyEdgeSet,
    #[error("loop is not closed or not head-to-tail at position {0}")]
    OpenLoop(usize),
    #[error("resource budget exceeded: {0}")]
    Resource(String),
    #[error("quadrature dimension {dims} exceeds the cap of {cap}")]
    DimensionCap { dims: usize, cap: usize },
    #[error("series too short: {len} samples, need at least {min}")]
    SeriesTooShort { len: usize, min: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
}
