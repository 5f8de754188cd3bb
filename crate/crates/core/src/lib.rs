//! Blind deconvolution from diverse inputs.
//!
//! An unknown impulse response `w = B h` is convolved with `N` unknown inputs
//! `x_n = C_n m_n`. The observations are linear in the rank-1 lifted matrix
//! `h mᵀ`, which is recovered by a factorized nonconvex program. The crate
//! also evaluates the coherence quantities and the golfing dual certificate
//! that govern when recovery is guaranteed, and runs phase-transition grids.

pub mod error;
pub mod certificate;
pub mod coherence;
pub mod experiments;
pub mod lbfgs;
pub mod lifting;
pub mod parallel;
pub mod seed;
pub mod solver;
pub mod spectral;

pub use error::{DeconvError, Result};
