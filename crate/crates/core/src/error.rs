use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("window [{x0},{y0})x[{x1},{y1}) out of bounds for {width}x{height} image")]
    OutOfBounds {
        x0: u32,
        y0: u32,
        x1: u32,
        y1: u32,
        width: u32,
        height: u32,
    },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("signature norm mismatch: expected {expected}, got {actual}")]
    NormMismatch {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("empty signature: image produced no features")]
    EmptySignature,

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("robust refinement failed: {0}")]
    RefinementFailed(String),

    #[error("config error: {0}")]
    Config(String),
}
