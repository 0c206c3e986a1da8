use thiserror::Error;

/// Errors raised by the forward model and analysis chain.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("block index {index} out of range for a rotor with {count} blocks")]
    BlockIndex { index: usize, count: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("quadrature did not converge: relative change {achieved:.3e} exceeds tolerance {requested:.3e}")]
    NonConvergence { achieved: f64, requested: f64 },

    #[error("windowing error: {0}")]
    Windowing(String),

    #[error("harmonic {0} has a zero template coefficient")]
    UndefinedHarmonic(usize),

    #[error("degenerate operating point: {0}")]
    Degenerate(String),

    #[error("at least 2 blocks are required, got {0}")]
    TooFewBlocks(usize),

    #[error("unknown budget parameter `{0}`")]
    UnknownParameter(String),

    #[error("incompatible channels: {0}")]
    IncompatibleChannels(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure(cond: bool, err: impl FnOnce() -> Error) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(err())
    }
}
