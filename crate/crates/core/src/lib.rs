//! Compton scattering tomography: scanner geometry, phantoms, the Gaussian
//! reconstruction basis, first-order forward operators, Monte-Carlo
//! transport, uncertainty-aware row-action solvers and image metrics.

pub mod basis;
pub mod error;
pub mod field;
pub mod forward;
pub mod geometry;
pub mod matrix;
pub mod metrics;
pub mod montecarlo;
pub mod phantom;
pub mod quadrature;
pub mod solvers;
pub mod uncertainty;

pub use error::{CstError, Result};
