//! Variance-ratio tests for common stochastic trends in high-dimensional
//! and function-valued time series.
//!
//! The crate is organized bottom-up:
//! - [`fdata`]: raw grid data, bases, projection to coordinates
//! - [`detrend`]: deterministic adjustment, differencing, partial summation
//! - [`lrcov`]: kernels, bandwidths, (long-run) covariance operators
//! - [`extractor`]: slack extractor and eigenvalue-gap diagnostics
//! - [`gev`]: generalized eigenvalue solver and VR / inverse-VR statistics
//! - [`limits`]: simulated limiting laws and critical-value tables
//! - [`runner`]: glue producing full test reports with critical values
//! - [`procedures`]: sequential dimension estimation and subspace tests
//! - [`mc`]: data-generating processes and the Monte Carlo driver

pub mod detrend;
pub mod error;
pub mod extractor;
pub mod fdata;
pub mod gev;
pub mod limits;
pub mod lrcov;
pub mod mc;
pub mod procedures;
pub mod runner;

pub use error::{CtError, Result};
