//! Feedback particle filters with probabilistic data association.
//!
//! The single-target filter (PDA-FPF) steers an unweighted particle
//! ensemble with a gain-times-innovation control, each measurement channel
//! weighted by its association probability β. The two-target variant
//! (JPDA-FPF) runs one ensemble per target and tracks the joint assignment
//! probability π. Kalman–Bucy, grid and Wonham oracles live in
//! [`reference`] and [`association`]; [`harness`] drives experiments.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod association;
pub mod error;
pub mod fpf;
pub mod gain;
pub mod harness;
pub mod models;
pub mod reference;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
