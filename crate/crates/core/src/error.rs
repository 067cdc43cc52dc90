//! Crate error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A structural parameter is out of range (grid geometry, power split, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A QAM order that is not a perfect square >= 4.
    #[error("invalid QAM order {0}: must be a perfect square >= 4")]
    InvalidQamOrder(usize),

    /// Vector or matrix dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The cyclic prefix cannot cover the channel delay spread.
    #[error("cyclic prefix too short: {0}")]
    CpTooShort(String),

    /// A dense computation was requested above its size cap.
    #[error("size cap exceeded: {0}")]
    SizeCap(String),

    /// A scalar function argument is outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Root bracketing failed: no sign change on the given interval.
    #[error("no sign change on bracket [{lo}, {hi}]")]
    Bracket { lo: f64, hi: f64 },

    /// A matrix factorization failed (not positive definite, singular, ...).
    #[error("factorization failed: {0}")]
    Factorization(String),
}
