//! Spatial inference with local false discovery rates.
//!
//! The pipeline turns per-sensor p-values into local false discovery rates
//! (lfdr's) using a beta-mixture density fitted by a spectral method of
//! moments, selects the alternative region with Bayesian FDR control and
//! extends sensor-level lfdr's to every grid point with thin-plate-spline
//! interpolation.
//!
//! Modules, bottom-up:
//!
//! - [`grid`]: observation grid, sensor layouts, ground truth.
//! - [`fieldsim`]: synthetic radio fields, noisy measurements, energy-detector p-values.
//! - [`stats`]: beta-mixture densities, moments, histograms and EDF distances.
//! - [`smom`]: spectral method-of-moments parameter estimation for p-value vectors.
//! - [`lfdr`]: model search, two-groups split, lfdr computation, BUM baseline.
//! - [`decide`]: BFDR selection, Benjamini–Hochberg, scoring against ground truth.
//! - [`interp`]: thin-plate-spline interpolation of lfdr's.
//! - [`oracle`]: true lfdr's for the energy detector (benchmarking only).
//! - [`harness`]: seeded Monte Carlo evaluation of FDR and power.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decide;
pub mod error;
pub mod fieldsim;
pub mod grid;
pub mod harness;
pub mod interp;
pub mod lfdr;
pub mod oracle;
pub mod rng;
pub mod smom;
pub mod stats;

pub use error::{Error, Result};
