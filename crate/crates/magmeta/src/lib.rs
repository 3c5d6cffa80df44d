//! Meta-analysis of magnitude effects based on standardized mean differences.
//!
//! The magnitude of a two-arm effect is the absolute standardized mean
//! difference |δ|, analyzed here through its square δ². The crate provides:
//!
//! - [`dists`]: the numerical substrate: normal/t/F/χ² distribution
//!   functions (central and noncentral), noncentrality inversion, folded
//!   normal moments, and the scaled noncentral-t sampler;
//! - [`effects`]: per-study effect measures (Cohen's d, Hedges's g, the
//!   unbiased δ² estimator and its variance) and the single-study
//!   F-profile confidence interval;
//! - [`pooling`]: between-study variance (τ²) estimation and pooled
//!   signed-SMD inference;
//! - [`magnitude`]: common-effect and random-effects inference for δ²,
//!   covering tests, profile intervals, naïve and corrected intervals from
//!   signed SMD intervals, conditional (given τ̂²) procedures, and the
//!   parametric bootstrap of sums of F variates;
//! - [`simulation`]: a reproducible scenario-grid Monte Carlo engine that
//!   measures bias, empirical level, and coverage of all of the above;
//! - [`io`] and [`cli`]: CSV ingestion, results persistence, reports,
//!   plots, and the command-line surface.

// Validation guards are written !(x > 0.0) so that NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dists;
pub mod effects;
pub mod error;
pub mod io;
pub mod magnitude;
pub mod pooling;
pub mod simulation;

pub use error::{Error, Result};
