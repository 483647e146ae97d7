//! Learning k-atomic distributions from samples corrupted by per-sample
//! Gaussian noise of known, heterogeneous scale.
//!
//! The estimation pipeline works on moments of one-dimensional projections:
//!
//! 1. [`hermite`] turns each noisy observation into an unbiased estimate of
//!    the clean raw moments and combines them with inverse-variance weights.
//! 2. [`moments`] projects the estimated moment vector onto the moment space
//!    of distributions supported on an interval and recovers atoms and weights
//!    by Gauss quadrature.
//! 3. [`estimators`] builds the one-dimensional estimator, a median-of-means
//!    layer over buckets of samples, the low-dimensional candidate search and
//!    the high-dimensional pipeline (weighted PCA followed by the search).
//!
//! Alongside the estimators, [`ambient`] evaluates the diffusion-side
//! objects in closed form for atomic mixtures (posterior-mean denoisers,
//! denoising score-matching losses for clean and noisy data, probability-flow
//! samplers), [`pricing`] turns benchmark tables into bounds on the relative
//! value of noisy samples, and [`sweep`] runs reproducible error-vs-n studies.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ambient;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod hermite;
pub mod io;
pub mod moments;
pub mod pricing;
pub mod rng;
pub mod sweep;

pub use distributions::{AtomicDistribution, HeteroDataset, Interval, NoisySample, SphereNet};
pub use error::{Error, Result};
pub use hermite::MomentVector;
