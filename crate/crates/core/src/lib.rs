//! Hybrid generative fixed-filter / FxNLMS active noise control.
//!
//! A pre-trained broadband control filter is split into band-limited
//! sub-filters; a frame-rate predictor weights them into a control filter,
//! an online clustering gate decides when that filter replaces the running
//! one, and a sample-rate FxNLMS engine keeps refining whatever is running.
//! Baselines (plain FxNLMS, generated-only, selective fixed-filter with and
//! without adaptation) share the same simulated plant.

pub mod cli;
pub mod clustering;
pub mod controllers;
pub mod error;
pub mod fxnlms;
pub mod gfanc;
pub mod harness;
pub mod noise;
pub mod paths;
pub mod signal;

pub use error::{AncError, Result};
