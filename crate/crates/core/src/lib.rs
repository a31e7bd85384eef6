//! Macroeconomic random forests: a random forest whose leaves hold a small
//! linear equation, so that its coefficients become generalized time-varying
//! parameters (GTVPs) driven by a large panel of state variables.
//!
//! The crate is organised bottom-up:
//!
//! * [`dataio`]: reading panels, stationarity transforms, direct targets and lags.
//! * [`features`]: factors, moving average factors and the state matrix `S_t`.
//! * [`ridgewls`]: ridge-penalised weighted least squares and random-walk weights.
//! * [`tree`]: the split search and tree growth.
//! * [`forest`]: bagging, prediction, GTVP extraction and credible bands.
//! * [`analysis`]: variable importance and surrogate trees.
//! * [`bench`]: simulation processes, competing models and the evaluation harness.

pub mod analysis;
pub mod bench;
pub mod dataio;
pub mod error;
pub mod features;
pub mod forest;
pub mod frame;
pub mod ridgewls;
pub mod tree;

pub use error::{MrfError, Result};
pub use frame::{Frame, LinearDesign};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
