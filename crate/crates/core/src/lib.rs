//! Security-analysis engine for decoy-state QKD with a bandwidth-limited
//! transmitter: correlated pulses, state-preparation flaws and mode-dependent
//! side channels.
//!
//! The pipeline runs characterization tables (or synthetic parameter sets)
//! through inner-product bounds, per-sequence decoy linear programs and a
//! phase-error estimate into an asymptotic secret-key rate per loss point.
//!
//! Scalar-generic numeric kernels (the CS envelope, the simplex solver,
//! entropy and Poisson helpers) accept any `num_traits::Float`; the pipeline
//! itself is fixed to [`Real`].

#![allow(clippy::needless_range_loop)] // indexed math over small grids

pub mod channel;
pub mod config;
pub mod cs;
pub mod decoy;
pub mod epsilon;
pub mod error;
pub mod inner;
pub mod model;
pub mod sensitivity;
pub mod simplex;
pub mod skr;
pub mod tables;
pub mod virt;

/// Concrete scalar used by the analysis pipeline.
pub type Real = f64;

pub use error::{Error, Result};
