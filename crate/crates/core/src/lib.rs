//! Integrable two-dimensional field equations built on finite and affine
//! Lie algebras.
//!
//! The crate is layered.  Exact integer and rational arithmetic underpins the
//! structure constants and Cartan data; complex doubles and forward-mode jets
//! carry field values on grids; on top sit the Toda systems, their zero
//! curvature connections, the affine extensions, harmonic map reductions, and
//! a local Wess-Zumino-Witten sector.
//!
//! Type aliases at the crate root fix the concrete scalar instantiations used
//! by the command line driver.

pub mod affine;
pub mod connection;
pub mod error;
pub mod grid;
pub mod harmonic;
pub mod lie;
pub mod matrix;
pub mod poly;
pub mod reduction;
pub mod scalar;
pub mod toda;
pub mod wzw;

pub use error::{Error, Result};
pub use scalar::{c64, C64, Jet2, Rat};

/// Matrix of machine integers, used for structure constants.
pub type IntMatrix = matrix::Matrix<i64>;
/// Matrix of exact rationals, used for Cartan matrix inverses.
pub type RatMatrix = matrix::Matrix<Rat>;
/// Matrix of complex doubles, the numeric workhorse.
pub type CMatrix = matrix::Matrix<C64>;
/// Matrix of jets carrying first and mixed second derivatives.
pub type JetMatrix = matrix::Matrix<Jet2>;
