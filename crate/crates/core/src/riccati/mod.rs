//! Backward integration of the deterministic equations: the LQ Riccati
//! equation and its comparison equation, the LQ-reduced second-order adjoint
//! equation, and the portfolio equations for Π, φ and κ.

mod factor;
mod lq;
pub mod ode;

use serde::Serialize;

use crate::path::MatrixPath;
use crate::scalar::Real;

pub use factor::{
    kappa_integrand, phi_rhs, pi_rhs, solve_kappa, solve_phi, solve_pi, solve_pi_phi,
    solve_pi_with_form, FactorCoefficients, PiEquationForm,
};
pub use lq::{
    comparison_rhs, riccati_bounds_check, lq_riccati_rhs, second_order_adjoint_rhs,
    solve_comparison_ode, solve_riccati_lq, solve_second_order_adjoint_lq, BoundViolation,
    BoundsReport, ViolationKind,
};

/// Guard multiplier applied to the a-priori bound when it is valid.
pub const GUARD_FACTOR_VERIFIED: f64 = 1e6;
/// Guard multiplier when the well-posedness hypothesis fails.
pub const GUARD_FACTOR_UNVERIFIED: f64 = 1e9;

/// Whether the sufficient well-posedness condition was verified on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Wellposedness {
    Verified,
    Unverified,
}

/// Solution of a symmetric matrix ODE on the grid.
#[derive(Debug, Clone)]
pub struct RiccatiSolution<T: Real> {
    pub p: MatrixPath<T>,
    pub blowup_flag: bool,
    /// Node index and norm at which the guard fired.
    pub blowup_at: Option<(usize, T)>,
    pub max_norm: T,
    /// Guard threshold used during integration.
    pub threshold: T,
    /// First node with a computed value (0 unless the guard fired).
    pub valid_from: usize,
    pub wellposedness: Wellposedness,
}

impl<T: Real> RiccatiSolution<T> {
    pub fn at(&self, i: usize) -> &nalgebra::DMatrix<T> {
        self.p.at(i)
    }

    pub fn initial(&self) -> &nalgebra::DMatrix<T> {
        self.p.first()
    }

    pub fn is_complete(&self) -> bool {
        !self.blowup_flag
    }

    pub(crate) fn from_run(
        grid: crate::grid::TimeGrid<T>,
        run: ode::OdeRun<T, nalgebra::DMatrix<T>>,
        threshold: T,
        wellposedness: Wellposedness,
    ) -> Self {
        Self {
            p: MatrixPath::from_raw(grid, run.values),
            blowup_flag: run.blowup.is_some(),
            blowup_at: run.blowup,
            max_norm: run.max_norm,
            threshold,
            valid_from: run.valid_from,
            wellposedness,
        }
    }

    /// `Err(Error::Blowup)` when the guard fired.
    pub fn ensure_complete(&self) -> crate::error::Result<()> {
        match self.blowup_at {
            None => Ok(()),
            Some((i, norm)) => Err(crate::error::Error::Blowup {
                time: self.p.grid().time(i).as_f64(),
                norm: norm.as_f64(),
                threshold: self.threshold.as_f64(),
                valid_from: self.valid_from,
            }),
        }
    }

    /// Largest `‖P(t) − P(t)ᵀ‖` over the grid.
    pub fn max_asymmetry(&self) -> T {
        self.p
            .values()
            .iter()
            .map(crate::linalg::asymmetry)
            .fold(T::zero(), |a, b| a.max(b))
    }
}
