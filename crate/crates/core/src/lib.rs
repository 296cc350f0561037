//! Masked differential privacy for token-set models.
//!
//! - [`accountant`]: RDP accounting of the Poisson-subsampled Gaussian
//!   mechanism and noise calibration.
//! - [`mechanism`]: clipping, Gaussian noise, Poisson sampling, seeded streams.
//! - [`model`]: a small token-set classifier with analytic gradients.
//! - [`data`]: dataset schema, synthetic generator, I/O, masked adjacency.
//! - [`trainer`]: MaskDP-SGD, DP-SGD and SGD training, evaluation, sweeps.
//! - [`cli`]: the `maskdp` command-line front end.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod cli;
pub mod data;
pub mod mechanism;
pub mod model;
pub mod trainer;
