use nalgebra::DMatrix;
use serde::Serialize;

use super::ode::rk4_backward;
use super::{RiccatiSolution, Wellposedness, GUARD_FACTOR_UNVERIFIED, GUARD_FACTOR_VERIFIED};
use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize_in_place};
use crate::model::{riccati_wellposedness_indicator, LqModel};
use crate::scalar::Real;

/// `dP/dt = −[AᵀP + PA + M + P(2ΣΓΣᵀ − BN⁻¹Bᵀ)P]`.
pub fn lq_riccati_rhs<T: Real>(model: &LqModel<T>, t: T, p: &DMatrix<T>) -> Result<DMatrix<T>> {
    let a = model.a.eval(t);
    let b = model.b.eval(t);
    let s = model.sigma.eval(t);
    let n_inv = linalg::inverse(&model.n.eval(t), "N(t)")?;
    let quad = &s * model.gamma.matrix() * s.transpose() * T::lit(2.0) - &b * n_inv * b.transpose();
    Ok(-(a.transpose() * p + p * &a + model.m.eval(t) + p * quad * p))
}

/// `dP̃/dt = −[AᵀP̃ + P̃A + M]`.
pub fn comparison_rhs<T: Real>(model: &LqModel<T>, t: T, p: &DMatrix<T>) -> DMatrix<T> {
    let a = model.a.eval(t);
    -(a.transpose() * p + p * &a + model.m.eval(t))
}

/// `dP₂/dt = −[AᵀP₂ + P₂A + M + 2(PΣ)Γ(PΣ)ᵀ]`.
pub fn second_order_adjoint_rhs<T: Real>(
    model: &LqModel<T>,
    t: T,
    p: &DMatrix<T>,
    p2: &DMatrix<T>,
) -> DMatrix<T> {
    let a = model.a.eval(t);
    let q = p * model.sigma.eval(t);
    -(a.transpose() * p2 + p2 * &a + model.m.eval(t) + &q * model.gamma.matrix() * q.transpose() * T::lit(2.0))
}

fn prepare<T: Real>(model: &LqModel<T>) -> Result<(T, Wellposedness)> {
    model.validate().into_result()?;
    let indicator = riccati_wellposedness_indicator(model)?;
    let verified = indicator.values().iter().all(|&v| v < T::zero());
    let bound = model.riccati_bound().max(T::one());
    Ok(if verified {
        (bound * T::lit(GUARD_FACTOR_VERIFIED), Wellposedness::Verified)
    } else {
        (bound * T::lit(GUARD_FACTOR_UNVERIFIED), Wellposedness::Unverified)
    })
}

/// Solves the asymmetric LQ Riccati equation backward from `P(T) = H`.
///
/// When the guard fires, the returned solution has `blowup_flag` set and
/// carries the partial path (see [`RiccatiSolution::valid_from`]).
pub fn solve_riccati_lq<T: Real>(model: &LqModel<T>) -> Result<RiccatiSolution<T>> {
    let (threshold, wp) = prepare(model)?;
    let run = rk4_backward(
        &model.grid,
        model.h.clone(),
        |t, p| lq_riccati_rhs(model, t, p).expect("N(t) invertible after validation"),
        symmetrize_in_place,
        threshold,
    );
    Ok(RiccatiSolution::from_run(model.grid, run, threshold, wp))
}

/// Solves the linear comparison equation backward from `P̃(T) = H`.
pub fn solve_comparison_ode<T: Real>(model: &LqModel<T>) -> Result<RiccatiSolution<T>> {
    let (threshold, _) = prepare(model)?;
    let run = rk4_backward(
        &model.grid,
        model.h.clone(),
        |t, p| comparison_rhs(model, t, p),
        symmetrize_in_place,
        threshold,
    );
    Ok(RiccatiSolution::from_run(model.grid, run, threshold, Wellposedness::Verified))
}

/// Solves the LQ-reduced second-order adjoint equation, terminal `P₂(T) = H`.
///
/// `P` is re-integrated alongside `P₂` so that RK4 stages see exact
/// intermediate values; the node values coincide with `riccati`.
pub fn solve_second_order_adjoint_lq<T: Real>(
    model: &LqModel<T>,
    riccati: &RiccatiSolution<T>,
) -> Result<RiccatiSolution<T>> {
    if riccati.blowup_flag {
        return Err(Error::Precondition("Riccati solution blew up".into()));
    }
    let threshold = riccati.threshold;
    let run = rk4_backward(
        &model.grid,
        (model.h.clone(), model.h.clone()),
        |t, (p, p2): &(DMatrix<T>, DMatrix<T>)| {
            (
                lq_riccati_rhs(model, t, p).expect("N(t) invertible after validation"),
                second_order_adjoint_rhs(model, t, p, p2),
            )
        },
        |(p, p2)| {
            symmetrize_in_place(p);
            symmetrize_in_place(p2);
        },
        threshold,
    );
    let blowup_at = run.blowup;
    let max_norm = run.values.iter().fold(T::zero(), |a, (_, p2)| a.max(p2.norm()));
    let valid_from = run.valid_from;
    let values = run.values.into_iter().map(|(_, p2)| p2).collect();
    Ok(RiccatiSolution {
        p: crate::path::MatrixPath::from_raw(model.grid, values),
        blowup_flag: blowup_at.is_some(),
        blowup_at,
        max_norm,
        threshold,
        valid_from,
        wellposedness: riccati.wellposedness,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// `P(t) ≥ 0` fails.
    Negative,
    /// `P(t) ≤ P̃(t)` fails.
    AboveComparison,
    /// `‖P(t)‖ ≤ B_P` fails.
    AboveBound,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundViolation {
    pub index: usize,
    pub kind: ViolationKind,
    pub value: f64,
}

/// Per-node check of `0 ≤ P(t) ≤ P̃(t)` and `‖P‖∞ ≤ B_P`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    /// False when the well-posedness hypothesis does not hold on the grid.
    pub applicable: bool,
    pub bound: f64,
    pub tolerance: f64,
    pub max_norm: f64,
    pub min_eigenvalue: f64,
    /// Minimum over t of the smallest eigenvalue of `P̃(t) − P(t)`.
    pub min_comparison_gap: f64,
    pub violations: Vec<BoundViolation>,
}

impl BoundsReport {
    pub fn holds(&self) -> bool {
        self.applicable && self.violations.is_empty()
    }
}

/// Checks the a-priori bounds of the Riccati solution against the comparison equation.
pub fn riccati_bounds_check<T: Real>(
    model: &LqModel<T>,
    sol: &RiccatiSolution<T>,
) -> Result<BoundsReport> {
    let bound = model.riccati_bound();
    let tol = T::lit(1e-9) * bound.max(T::one());
    let applicable = sol.wellposedness == Wellposedness::Verified && !sol.blowup_flag;
    let mut report = BoundsReport {
        applicable,
        bound: bound.as_f64(),
        tolerance: tol.as_f64(),
        max_norm: sol.max_norm.as_f64(),
        min_eigenvalue: f64::NAN,
        min_comparison_gap: f64::NAN,
        violations: vec![],
    };
    if !applicable {
        return Ok(report);
    }
    let tilde = solve_comparison_ode(model)?;
    let mut min_eig = T::lit(f64::INFINITY);
    let mut min_gap = T::lit(f64::INFINITY);
    for i in 0..model.grid.len() {
        let p = sol.at(i);
        let lo = linalg::min_eigenvalue(p);
        let gap = linalg::min_eigenvalue(&(tilde.at(i) - p));
        let norm = p.norm();
        min_eig = min_eig.min(lo);
        min_gap = min_gap.min(gap);
        if lo < -tol {
            report.violations.push(BoundViolation { index: i, kind: ViolationKind::Negative, value: lo.as_f64() });
        }
        if gap < -tol {
            report.violations.push(BoundViolation {
                index: i,
                kind: ViolationKind::AboveComparison,
                value: gap.as_f64(),
            });
        }
        if norm > bound + tol {
            report.violations.push(BoundViolation { index: i, kind: ViolationKind::AboveBound, value: norm.as_f64() });
        }
    }
    report.min_eigenvalue = min_eig.as_f64();
    report.min_comparison_gap = min_gap.as_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use nalgebra::DVector;

    use super::*;
    use crate::grid::TimeGrid;
    use crate::linalg::dmat;
    use crate::model::GammaMatrix;

    fn scalar(a: f64, b: f64, m: f64, h: f64, gamma: f64, steps: usize) -> LqModel<f64> {
        LqModel::constant(
            TimeGrid::new(1.0, steps).unwrap(),
            dmat(1, 1, &[a]),
            dmat(1, 1, &[b]),
            dmat(1, 1, &[1.0]),
            dmat(1, 1, &[m]),
            dmat(1, 1, &[1.0]),
            dmat(1, 1, &[h]),
            GammaMatrix::scalar(1, gamma).unwrap(),
            DVector::from_element(1, 1.0),
        )
    }

    #[test]
    fn closed_form_scalar_riccati() {
        let sol = solve_riccati_lq(&scalar(0.0, 1.0, 0.0, 1.0, 0.25, 1000)).unwrap();
        assert!(!sol.blowup_flag);
        assert_eq!(sol.wellposedness, Wellposedness::Verified);
        assert!((sol.initial()[(0, 0)] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(sol.p.last()[(0, 0)], 1.0);
    }

    #[test]
    fn zero_terminal_and_running_cost_gives_zero() {
        let sol = solve_riccati_lq(&scalar(0.3, 1.0, 0.0, 0.0, 0.25, 50)).unwrap();
        assert!(sol.p.values().iter().all(|p| p[(0, 0)] == 0.0));
        let tilde = solve_comparison_ode(&scalar(0.3, 1.0, 0.0, 0.0, 0.25, 50)).unwrap();
        assert!(tilde.p.values().iter().all(|p| p[(0, 0)] == 0.0));
    }

    #[test]
    fn comparison_closed_forms() {
        let t = solve_comparison_ode(&scalar(0.0, 1.0, 1.0, 1.0, 0.25, 100)).unwrap();
        assert!((t.initial()[(0, 0)] - 2.0).abs() < 1e-13);
        let t = solve_comparison_ode(&scalar(0.1, 1.0, 0.0, 1.0, 0.25, 100)).unwrap();
        assert!((t.initial()[(0, 0)] - 0.2f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn bounds_on_scalar_example() {
        let model = scalar(0.0, 1.0, 0.0, 1.0, 0.25, 200);
        let sol = solve_riccati_lq(&model).unwrap();
        let rep = riccati_bounds_check(&model, &sol).unwrap();
        assert!(rep.holds(), "{rep:?}");
        assert!((rep.bound - 1.0).abs() < 1e-15);
        assert_eq!(rep.min_comparison_gap, 0.0);
    }

    #[test]
    fn bounds_not_applicable_without_hypothesis() {
        let model = scalar(0.0, 0.0, 0.0, 1.0, 0.25, 50);
        let sol = solve_riccati_lq(&model).unwrap();
        assert_eq!(sol.wellposedness, Wellposedness::Unverified);
        let rep = riccati_bounds_check(&model, &sol).unwrap();
        assert!(!rep.applicable && !rep.holds());
    }

    #[test]
    fn finite_escape_sets_blowup_flag() {
        // B = 0 with strong risk sensitivity: dP/dt = -2γP², escape at 1 - 1/(2γ)
        let model = scalar(0.0, 0.0, 0.0, 1.0, 2.0, 2000);
        let sol = solve_riccati_lq(&model).unwrap();
        assert!(sol.blowup_flag);
        assert!(sol.valid_from > 0);
    }

    #[test]
    fn second_order_adjoint_scalar_closed_form() {
        // P₂ = 2 − P when A = 0, B = N = Σ = H = 1, M = 0, Γ = 1/4
        let model = scalar(0.0, 1.0, 0.0, 1.0, 0.25, 1000);
        let sol = solve_riccati_lq(&model).unwrap();
        let p2 = solve_second_order_adjoint_lq(&model, &sol).unwrap();
        for i in 0..model.grid.len() {
            assert_eq!(p2.p.at(i).nrows(), 1);
            assert!((p2.at(i)[(0, 0)] - (2.0 - sol.at(i)[(0, 0)])).abs() < 1e-12);
        }
        assert!((p2.initial()[(0, 0)] - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn f32_instantiation_compiles_and_agrees() {
        let model: LqModel<f32> = LqModel::constant(
            TimeGrid::new(1.0f32, 100).unwrap(),
            dmat(1, 1, &[0.0]),
            dmat(1, 1, &[1.0]),
            dmat(1, 1, &[1.0]),
            dmat(1, 1, &[0.0]),
            dmat(1, 1, &[1.0]),
            dmat(1, 1, &[1.0]),
            GammaMatrix::scalar(1, 0.25f32).unwrap(),
            DVector::from_element(1, 1.0f32),
        );
        let sol = solve_riccati_lq(&model).unwrap();
        assert!((sol.initial()[(0, 0)] - 2.0 / 3.0).abs() < 1e-5);
    }
}
