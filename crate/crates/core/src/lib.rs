//! Covariance-based activity detection for massive MIMO random access.
//!
//! The library simulates a grant-free uplink in which a base station with `M`
//! antennas observes one coherence block of `L` symbols and must decide which
//! of `Ktot` known pilot sequences were transmitted. It provides:
//!
//! * [`system_model`] — pilot/codebook generation, fading and noise synthesis,
//!   sample covariances; the data source for everything else.
//! * [`detectors`] — coordinate-wise minimization of the covariance
//!   log-likelihood (ML) and of the covariance least-squares fit (NNLS), with
//!   rank-1 maintenance of the inverse, box constraints, a projected-gradient
//!   NNLS reference solver, and thresholding.
//! * [`amp`] — the Bayesian MMV-AMP baseline with its posterior-mean denoiser,
//!   state evolution, and divergence instrumentation.
//! * [`metrics`] — misdetection/false-alarm rates, ROC sweeps, relative `lp`
//!   errors, sample-covariance deviation, and the OR-MAC entropy bound.
//! * [`ura`] — the concatenated unsourced-random-access scheme: an outer tree
//!   code over GF(2) plus the inner activity-detection codec, end to end.
//!
//! All randomness flows through explicit `u64` seeds and a fixed generator
//! (ChaCha8), so every simulation artifact is reproducible bit for bit.

pub mod amp;
pub mod detectors;
mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod system_model;
pub mod ura;

pub use error::{CoreError, Result};
pub use linalg::{CMat, CVec};
pub use num_complex::Complex64;
