//! Ridge-penalized synthetic control for unit-by-time outcome panels.
//!
//! The crate is organised as a pipeline:
//!
//! - [`ingest`] turns incident-level records into daily per-city counts under a
//!   level-2 crime taxonomy and screens series for reporting discontinuities.
//! - [`panel`] aggregates daily counts into intervention-anchored time blocks,
//!   normalises per capita and demeans on the pre-period.
//! - [`synth`] solves the sum-to-one ridge weight program, tunes the penalty on a
//!   held-out pre-period segment and computes effect statistics.
//! - [`inference`] builds unit placebo distributions, p-values, percentile
//!   bounds, Holm-Šidák adjustments and in-time / early roll-in robustness runs.
//! - [`its`] is the single-unit interrupted time series baseline (regression with
//!   ARIMA errors, plus a Poisson autoregression for sparse counts).
//! - [`datagen`] generates factor-model panels with known ground truth.
//! - [`smooth`] is the loess smoother used for display series.

pub mod datagen;
pub mod error;
pub mod inference;
pub mod ingest;
pub mod its;
pub mod linalg;
pub mod panel;
pub mod rng;
pub mod smooth;
pub mod synth;

pub use error::{Error, Result};
