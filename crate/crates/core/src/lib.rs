//! Multi-context underwater vehicle laboratory.
//!
//! Simulates a 6-DOF vehicle under injected model faults ([`contexts`]),
//! turns the resulting trajectories into windowed, stratified datasets
//! ([`dataset`]) and trains gating classifiers that recognise the active
//! model context from short observation windows ([`nnet`], [`forest`]).
//! [`ident`] recovers the hydrodynamic coefficients by least squares and
//! [`eval`] orchestrates the experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
pub mod contexts;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod forest;
pub mod hydro;
pub mod ident;
pub mod nnet;
pub mod simgen;

pub use error::{Error, Result};
