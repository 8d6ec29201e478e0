//! Time-periodic continuous-time Markov jump processes on finite graphs.
//!
//! Rates are piecewise constant on a uniform grid of the period. The crate
//! simulates paths by thinning, computes the periodic steady state, evaluates
//! the level-2.5 rate functionals and their contractions, and checks the
//! reversal identities for several entropy functionals.

pub mod contract;
pub mod config;
pub mod entropy;
pub mod error;
pub mod grid;
pub mod ldp;
pub mod io;
pub mod linalg;
pub mod model;
pub mod sample;
pub mod simulate;
pub mod steady;

pub use error::{Error, Result};
