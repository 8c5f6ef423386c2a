//! Numerical toolkit for asymmetric risk-sensitive control.
//!
//! The risk criterion is the value of a quadratic BSDE whose driver
//! penalizes each Brownian direction separately through a matrix Γ. This
//! crate provides:
//!
//! * a lattice solver for the criterion of a terminal payoff, with Taylor
//!   expansion and variance-decomposition diagnostics ([`lattice`], [`criterion`]);
//! * Riccati solvers for the linear-quadratic problem and for the factor
//!   portfolio problem ([`riccati`], [`lq`], [`portfolio`]);
//! * seeded Monte Carlo simulation of closed-loop systems ([`sde`]);
//! * a numerical check of the stochastic maximum principle ([`smp`]).
//!
//! Everything is generic over [`Real`] (`f32` or `f64`); the `*F64` aliases
//! below name the usual double-precision instantiations.

// `!(x > 0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops walk several parallel buffers at once
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod criterion;
pub mod grid;
pub mod lattice;
pub mod linalg;
pub mod model;
pub mod lq;
pub mod path;
pub mod portfolio;
pub mod random;
pub mod riccati;
pub mod scalar;
pub mod sde;
pub mod smp;

pub use error::{Error, Result};
pub use grid::{GridSummary, TimeGrid};
pub use model::{FactorMarketModel, GammaMatrix, LqModel, ValidationReport};
pub use path::{MatrixPath, Path, ScalarPath, VectorPath};
pub use random::RandomSource;
pub use riccati::RiccatiSolution;
pub use scalar::Real;

pub type TimeGridF64 = TimeGrid<f64>;
pub type GammaMatrixF64 = GammaMatrix<f64>;
pub type LqModelF64 = LqModel<f64>;
pub type FactorMarketModelF64 = FactorMarketModel<f64>;
pub type RiccatiSolutionF64 = RiccatiSolution<f64>;
pub type LqModelF32 = LqModel<f32>;
pub type FactorMarketModelF32 = FactorMarketModel<f32>;
