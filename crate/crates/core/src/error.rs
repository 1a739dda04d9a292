use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the range where the model is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown detector preset `{0}` (expected one of MCT, QWIP, QCD)")]
    UnknownPreset(String),

    /// The record is too short to reach the requested resolution bandwidth.
    #[error("resolution bandwidth {requested} Hz is not achievable; minimum for this record is {minimum} Hz")]
    RbwUnachievable { requested: f64, minimum: f64 },

    #[error("length mismatch: {left} vs {right} samples")]
    LengthMismatch { left: usize, right: usize },

    #[error("frequency {freq} Hz aliases at sample rate {fs} Hz (must be below {nyquist} Hz)", nyquist = fs / 2.0)]
    Aliasing { freq: f64, fs: f64 },

    #[error("search window [{lo}, {hi}] Hz contains no spectrum bins")]
    EmptyWindow { lo: f64, hi: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("fit did not converge: {0}")]
    NonConvergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Fails with a domain error unless `ok` holds.
pub(crate) fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Domain(msg()))
    }
}
