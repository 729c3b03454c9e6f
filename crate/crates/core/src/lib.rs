//! Matrix concentration toolkit for finite-state Markov chains.
//!
//! The crate evaluates Rosenthal, Hoeffding, Bernstein and Bennett type bounds
//! for sums `S_n = F(Z_0) + ... + F(Z_{n-1})` of matrix-valued functions of a
//! finite Markov chain, solves the matrix Poisson equation `G - QG = F`
//! exactly, and checks each inequality by simulation or exhaustive
//! enumeration.

// `!(x >= a)` is used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apps;
pub mod bounds;
pub mod chain;
pub mod error;
pub mod matrix;
pub mod mc;
pub mod poisson;
pub mod verify;

pub use error::{Error, Result};
