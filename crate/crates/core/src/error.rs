use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the IDX reader. Each malformed-file condition has its
/// own variant so callers can tell them apart.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("bad IDX magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic { found: u32, expected: u32 },
    #[error("truncated IDX file: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("IDX dimensions overflow addressable size")]
    DimOverflow,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("KL divergence is undefined: zero variance in latent dimension {0}")]
    ZeroVariance(usize),
    #[error("degenerate precision at output {index}: E[(W_alpha z)^2] = {value}")]
    DegeneratePrecision { index: usize, value: f64 },
    #[error("exhaustive enumeration limited to 20 dimensions, got {0}")]
    EnumerationTooLarge(usize),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
