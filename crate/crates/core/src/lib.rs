//! Unsupervised multivariate signal separation with reservoir computing.
//!
//! A noisy multichannel series is used as its own training set: an echo state
//! network learns to predict it one step ahead, the prediction is taken as the
//! deterministic part and the residual as noise. The residual's principal
//! directions and the per-direction signal-to-noise balance then define a
//! diagonal calibration that re-weights the input before a second
//! reconstruction pass.
//!
//! Modules:
//! - [`reservoir`]: echo state network construction, driving, ridge readout.
//! - [`denoiser`]: the tentative pass, residual PCA, calibration weights and
//!   the calibrated pass.
//! - [`signals`]: Kuramoto–Sivashinsky and sinusoid generators, correlated
//!   noise injection at a target SNR.
//! - [`metrics`]: SNR reports and benchmark grids.
//! - [`hyperopt`]: RBF-surrogate search over reservoir hyperparameters.
//! - [`cli`]: the `mssrc` command-line front end and its file formats.

// `!(x > y)` is used on purpose so NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod denoiser;
pub mod error;
pub mod hyperopt;
pub mod metrics;
pub mod reservoir;
pub mod series;
pub mod signals;

pub use denoiser::{mssrc, DenoiseConfig, DenoiseResult};
pub use error::{Error, Result};
pub use reservoir::{EsnConfig, Readout, Reservoir};
pub use series::TimeSeriesMatrix;
