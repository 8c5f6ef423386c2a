use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::ode::rk4_backward;
use super::{RiccatiSolution, Wellposedness, GUARD_FACTOR_UNVERIFIED, GUARD_FACTOR_VERIFIED};
use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize_in_place, DEFINITENESS_TOL};
use crate::model::FactorMarketModel;
use crate::path::{ScalarPath, VectorPath};
use crate::scalar::Real;

/// Sign convention used for the Π equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PiEquationForm {
    /// `dΠ/dt = −[(Bᵀ−AᵀΘ⁻¹Ξ)Π + Π(B−ΞᵀΘ⁻¹A) − ΠQΠ + AᵀΘ⁻¹A]`, obtained by
    /// matching the quadratic ansatz for the value process. Keeps Π symmetric
    /// and nonnegative.
    #[default]
    Derived,
    /// `dΠ/dt = −[(Bᵀ−AᵀΘ⁻¹Ξ)Π − Π(B−ΞᵀΘ⁻¹A) + ΠQΠ − AᵀΘ⁻¹A]`, the sign
    /// pattern of the published display. Diagnostic only: it does not
    /// reproduce simulated growth rates and its solution is not symmetric.
    AsPrinted,
}

/// Constant coefficient blocks of the portfolio problem.
#[derive(Debug, Clone)]
pub struct FactorCoefficients<T: Real> {
    /// `Θ = Σ(2Γ + I)Σᵀ` (m×m).
    pub theta: DMatrix<T>,
    pub theta_inv: DMatrix<T>,
    /// `Ξ = 2ΣΓΛᵀ` (m×n).
    pub xi: DMatrix<T>,
    /// `Ψ = 2ΛΓΛᵀ` (n×n).
    pub psi: DMatrix<T>,
    /// Schur complement `Q = Ψ − ΞᵀΘ⁻¹Ξ`.
    pub schur: DMatrix<T>,
    pub schur_min_eigenvalue: T,
    /// `Θ⁻¹Ξ`.
    pub theta_inv_xi: DMatrix<T>,
    /// `AᵀΘ⁻¹A`.
    pub a_theta_inv_a: DMatrix<T>,
    /// `Bᵀ − AᵀΘ⁻¹Ξ`.
    pub drift_t: DMatrix<T>,
}

impl<T: Real> FactorCoefficients<T> {
    pub fn new(model: &FactorMarketModel<T>) -> Result<Self> {
        model.validate().into_result()?;
        let s = &model.sigma;
        let g = model.gamma.matrix();
        let two = T::lit(2.0);
        let d = g.nrows();
        let theta = linalg::symmetrize(&(s * (g * two + DMatrix::identity(d, d)) * s.transpose()));
        let theta_inv = linalg::symmetrize(&linalg::inverse(&theta, "Theta")?);
        let xi = s * g * model.lambda.transpose() * two;
        let psi = linalg::symmetrize(&(&model.lambda * g * model.lambda.transpose() * two));
        let theta_inv_xi = &theta_inv * &xi;
        let schur = linalg::symmetrize(&(&psi - xi.transpose() * &theta_inv_xi));
        let a_theta_inv_a =
            linalg::symmetrize(&(model.loading.transpose() * &theta_inv * &model.loading));
        let drift_t = model.mean_reversion.transpose() - model.loading.transpose() * &theta_inv_xi;
        Ok(Self {
            schur_min_eigenvalue: linalg::min_eigenvalue(&schur),
            theta,
            theta_inv,
            xi,
            psi,
            schur,
            theta_inv_xi,
            a_theta_inv_a,
            drift_t,
        })
    }

    /// Whether `Ψ − ΞᵀΘ⁻¹Ξ > 0`, the hypothesis of the a-priori bound on Π.
    pub fn schur_positive(&self) -> bool {
        self.schur_min_eigenvalue > T::lit(DEFINITENESS_TOL)
    }

    /// `exp{2(|B| + |Ξ||Θ⁻¹||A|)T}·|A|²·|Θ⁻¹|·T`.
    pub fn pi_bound(&self, model: &FactorMarketModel<T>) -> T {
        let t = model.grid.horizon();
        let a = model.loading.norm();
        let ti = self.theta_inv.norm();
        let rate = model.mean_reversion.norm() + self.xi.norm() * ti * a;
        (T::lit(2.0) * rate * t).exp() * a * a * ti * t
    }
}

/// Right-hand side of the Π equation.
pub fn pi_rhs<T: Real>(c: &FactorCoefficients<T>, form: PiEquationForm, pi: &DMatrix<T>) -> DMatrix<T> {
    let lin_left = &c.drift_t * pi;
    let lin_right = pi * c.drift_t.transpose();
    let quad = pi * &c.schur * pi;
    match form {
        PiEquationForm::Derived => -(lin_left + lin_right - quad + &c.a_theta_inv_a),
        PiEquationForm::AsPrinted => -(lin_left - lin_right + quad - &c.a_theta_inv_a),
    }
}

/// Right-hand side of the φ equation:
/// `dφ/dt = −{[Bᵀ − ΠQ − AᵀΘ⁻¹Ξ]φ + Π[b − ΞᵀΘ⁻¹(a−r𝟏)] + AᵀΘ⁻¹(a−r𝟏)}`.
pub fn phi_rhs<T: Real>(
    model: &FactorMarketModel<T>,
    c: &FactorCoefficients<T>,
    r: T,
    pi: &DMatrix<T>,
    phi: &DVector<T>,
) -> DVector<T> {
    let excess = model.excess_intercept(r);
    let ti_excess = &c.theta_inv * &excess;
    let forcing = &model.b - c.xi.transpose() * &ti_excess;
    let lin = &c.drift_t - pi * &c.schur;
    -(lin * phi + pi * forcing + model.loading.transpose() * ti_excess)
}

/// Integrand `l` of `κ(t) = ∫_t^T l(s) ds`:
/// `l = −½[tr(ΛΛᵀΠ) + 2r + 2bᵀφ − φᵀQφ − 2φᵀΞᵀΘ⁻¹(a−r𝟏) + (a−r𝟏)ᵀΘ⁻¹(a−r𝟏)]`.
pub fn kappa_integrand<T: Real>(
    model: &FactorMarketModel<T>,
    c: &FactorCoefficients<T>,
    r: T,
    pi: &DMatrix<T>,
    phi: &DVector<T>,
) -> T {
    let two = T::lit(2.0);
    let excess = model.excess_intercept(r);
    let ti_excess = &c.theta_inv * &excess;
    let ll = &model.lambda * model.lambda.transpose();
    let bracket = linalg::trace_product(&ll, pi) + two * r + two * model.b.dot(phi)
        - phi.dot(&(&c.schur * phi))
        - two * phi.dot(&(c.xi.transpose() * &ti_excess))
        + excess.dot(&ti_excess);
    -bracket * T::lit(0.5)
}

fn guard<T: Real>(model: &FactorMarketModel<T>, c: &FactorCoefficients<T>) -> (T, Wellposedness) {
    let bound = c.pi_bound(model).max(T::one());
    if c.schur_positive() {
        (bound * T::lit(GUARD_FACTOR_VERIFIED), Wellposedness::Verified)
    } else {
        (bound * T::lit(GUARD_FACTOR_UNVERIFIED), Wellposedness::Unverified)
    }
}

fn post_pi<T: Real>(form: PiEquationForm, p: &mut DMatrix<T>) {
    if form == PiEquationForm::Derived {
        symmetrize_in_place(p)
    }
}

/// Solves the Π equation (derived sign convention) backward from `Π(T) = 0`.
pub fn solve_pi<T: Real>(model: &FactorMarketModel<T>) -> Result<RiccatiSolution<T>> {
    solve_pi_with_form(model, PiEquationForm::Derived)
}

pub fn solve_pi_with_form<T: Real>(
    model: &FactorMarketModel<T>,
    form: PiEquationForm,
) -> Result<RiccatiSolution<T>> {
    let c = FactorCoefficients::new(model)?;
    let (threshold, wp) = guard(model, &c);
    let n = model.factors();
    let run = rk4_backward(
        &model.grid,
        DMatrix::zeros(n, n),
        |_, p| pi_rhs(&c, form, p),
        |p| post_pi(form, p),
        threshold,
    );
    Ok(RiccatiSolution::from_run(model.grid, run, threshold, wp))
}

/// Integrates Π and φ jointly so the RK4 stages of φ see consistent Π values.
pub fn solve_pi_phi<T: Real>(
    model: &FactorMarketModel<T>,
    form: PiEquationForm,
) -> Result<(RiccatiSolution<T>, VectorPath<T>)> {
    let c = FactorCoefficients::new(model)?;
    let (threshold, wp) = guard(model, &c);
    let n = model.factors();
    let run = rk4_backward(
        &model.grid,
        (DMatrix::zeros(n, n), DVector::zeros(n)),
        |t, (p, f): &(DMatrix<T>, DVector<T>)| {
            (pi_rhs(&c, form, p), phi_rhs(model, &c, model.rate.eval(t), p, f))
        },
        |(p, _)| post_pi(form, p),
        threshold,
    );
    let blowup_at = run.blowup;
    let valid_from = run.valid_from;
    let max_norm = run.max_norm;
    let (pis, phis): (Vec<_>, Vec<_>) = run.values.into_iter().unzip();
    let pi = RiccatiSolution {
        p: crate::path::MatrixPath::from_raw(model.grid, pis),
        blowup_flag: blowup_at.is_some(),
        blowup_at,
        max_norm,
        threshold,
        valid_from,
        wellposedness: wp,
    };
    Ok((pi, VectorPath::from_raw(model.grid, phis)))
}

/// Solves the φ equation driven by `pi` (derived convention), `φ(T) = 0`.
///
/// Π is re-integrated alongside φ; the result is rejected if the
/// re-integrated nodes do not reproduce `pi`.
pub fn solve_phi<T: Real>(
    model: &FactorMarketModel<T>,
    pi: &RiccatiSolution<T>,
) -> Result<VectorPath<T>> {
    if pi.blowup_flag {
        return Err(Error::Precondition("Pi solution blew up".into()));
    }
    if pi.p.grid().steps() != model.grid.steps() {
        return Err(Error::Grid("Pi is sampled on a different grid".into()));
    }
    let (again, phi) = solve_pi_phi(model, PiEquationForm::Derived)?;
    let scale = pi.max_norm.max(T::one());
    let mismatch = again
        .p
        .values()
        .iter()
        .zip(pi.p.values())
        .fold(T::zero(), |m, (a, b)| m.max((a - b).amax()));
    if mismatch > T::lit(1e-9) * scale {
        return Err(Error::Precondition(format!(
            "Pi does not solve the Pi equation on this grid (max deviation {mismatch})"
        )));
    }
    Ok(phi)
}

/// `κ(t) = ∫_t^T l(s) ds` by composite Simpson quadrature; `κ(T) = 0`.
pub fn solve_kappa<T: Real>(
    model: &FactorMarketModel<T>,
    pi: &RiccatiSolution<T>,
    phi: &VectorPath<T>,
) -> Result<ScalarPath<T>> {
    let c = FactorCoefficients::new(model)?;
    let grid = model.grid;
    if pi.p.grid().steps() != grid.steps() || phi.grid().steps() != grid.steps() {
        return Err(Error::Grid("Pi/phi are sampled on a different grid".into()));
    }
    let l: Vec<T> = (0..grid.len())
        .map(|i| kappa_integrand(model, &c, *model.rate.at(i), pi.at(i), phi.at(i)))
        .collect();
    Ok(ScalarPath::from_raw(grid, crate::path::tail_integrals(&l, grid.dt())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::linalg::{dmat, dvec};
    use crate::model::GammaMatrix;

    pub(crate) fn model(
        a: f64,
        loading: f64,
        b: f64,
        mean_rev: f64,
        lambda: [f64; 2],
        gamma: GammaMatrix<f64>,
        steps: usize,
    ) -> FactorMarketModel<f64> {
        let grid = TimeGrid::new(1.0, steps).unwrap();
        FactorMarketModel {
            a: dvec(&[a]),
            b: dvec(&[b]),
            loading: dmat(1, 1, &[loading]),
            mean_reversion: dmat(1, 1, &[mean_rev]),
            lambda: dmat(1, 2, &lambda),
            sigma: dmat(1, 2, &[0.2, 0.0]),
            rate: ScalarPath::constant(grid, 0.02),
            gamma,
            x0: dvec(&[0.1]),
            grid,
        }
    }

    #[test]
    fn coefficient_blocks_scalar_example() {
        let m = model(0.06, 0.0, 0.0, 0.0, [0.0, 0.1], GammaMatrix::diagonal(&[0.1, 0.3]).unwrap(), 10);
        let c = FactorCoefficients::new(&m).unwrap();
        assert!((c.theta[(0, 0)] - 0.048).abs() < 1e-15);
        assert_eq!(c.xi[(0, 0)], 0.0);
        assert!((c.psi[(0, 0)] - 0.006).abs() < 1e-15);
        assert!(c.schur_positive());
    }

    #[test]
    fn zero_loading_gives_zero_pi_phi_and_linear_kappa() {
        let m = model(0.06, 0.0, 0.0, 0.0, [0.0, 0.1], GammaMatrix::diagonal(&[0.1, 0.3]).unwrap(), 100);
        let (pi, phi) = solve_pi_phi(&m, PiEquationForm::Derived).unwrap();
        assert!(pi.p.values().iter().all(|p| p[(0, 0)] == 0.0));
        assert!(phi.values().iter().all(|f| f[0] == 0.0));
        let kappa = solve_kappa(&m, &pi, &phi).unwrap();
        let expected = -(0.02 + 0.5 * 0.04 * 0.04 / 0.048);
        assert!((kappa.first() - expected).abs() < 1e-14);
        assert_eq!(*kappa.last(), 0.0);
    }

    #[test]
    fn frozen_values_for_mixed_market() {
        // Values from an independent high-resolution integration of the derived system.
        let g = GammaMatrix::scalar(2, 0.1).unwrap();
        let m = model(0.04, 0.5, 0.02, -1.0, [0.1, 0.3], g, 1000);
        let (pi, phi) = solve_pi_phi(&m, PiEquationForm::Derived).unwrap();
        let kappa = solve_kappa(&m, &pi, &phi).unwrap();
        assert!((pi.initial()[(0, 0)] - 2.161733845650883).abs() < 1e-9);
        assert!((phi.first()[0] - 0.14558407491425923).abs() < 1e-9);
        assert!((kappa.first() + 0.09756954972350503).abs() < 1e-9);
        let phi2 = solve_phi(&m, &solve_pi(&m).unwrap()).unwrap();
        assert_eq!(phi2.values(), phi.values());
    }

    #[test]
    fn printed_form_is_not_symmetric_preserving() {
        let g = GammaMatrix::scalar(2, 0.1).unwrap();
        let m = model(0.04, 0.5, 0.02, -1.0, [0.1, 0.3], g, 200);
        let printed = solve_pi_with_form(&m, PiEquationForm::AsPrinted).unwrap();
        // scalar factor: the antisymmetric linear term cancels, leaving a nonpositive solution
        assert!(printed.initial()[(0, 0)] < 0.0);
    }

    #[test]
    fn phi_rejects_foreign_pi() {
        let g = GammaMatrix::scalar(2, 0.1).unwrap();
        let m = model(0.04, 0.5, 0.02, -1.0, [0.1, 0.3], g, 200);
        let wrong = solve_pi_with_form(&m, PiEquationForm::AsPrinted).unwrap();
        assert!(solve_phi(&m, &wrong).is_err());
    }
}
