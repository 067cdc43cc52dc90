//! Link-level OTFS-NOMA equalization and detection.
//!
//! Two users share a delay-Doppler resource grid and are multiplexed in the
//! power domain. The receiver side of this crate provides:
//!
//! * an iterative reliability-zone (RZ) detector with symbol-level
//!   interference cancellation ([`detector`]),
//! * the modified LSQR equalizer that also computes the post-equalization
//!   MSE, exactly or through a low-complexity BCCB approximation ([`mlsqr`]),
//! * the detection-probability model and MSE-tracked threshold optimization
//!   that drive the RZ detector ([`thresholds`]),
//! * an MMSE equalizer with packet-level SIC as the comparison baseline
//!   ([`baseline`]).
//!
//! Supporting pieces: OTFS modulation and the effective delay-Doppler channel
//! ([`waveform`]), TDL-C/Jakes time-varying channel generation ([`channel`]),
//! grid geometry and QAM constellations ([`grid`]), and a small dense complex
//! linear-algebra toolbox ([`linalg`]).

pub mod baseline;
pub mod channel;
pub mod detector;
mod dft;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod mlsqr;
pub mod thresholds;
pub mod waveform;

pub use error::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
