//! Numerical check of the stochastic maximum principle at the LQ instance
//! `b = Ax + Bu`, `σ = Σ(t)`, `f = ½xᵀMx + ½uᵀNu`.
//!
//! There the first-order adjoint is `p = PX̄`, `q = PΣ`, and `Z̄ = Σᵀp`. The
//! diffusion does not depend on the control, so the full Hamiltonian ℋ
//! differs from `H` only by terms that vanish identically.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::LqModel;
use crate::path::{MatrixPath, ScalarPath};
use crate::random::RandomSource;
use crate::riccati::{self, RiccatiSolution};
use crate::scalar::Real;
use crate::sde::PathBundle;

/// `H = pᵀb + tr{qᵀσ} + 2pᵀσΓz + g` from already evaluated coefficients.
pub fn hamiltonian_from_parts<T: Real>(
    p: &DVector<T>,
    b: &DVector<T>,
    q: &DMatrix<T>,
    sigma: &DMatrix<T>,
    gamma: &DMatrix<T>,
    z: &DVector<T>,
    g: T,
) -> T {
    p.dot(b) + linalg::trace_product(&q.transpose(), sigma) + T::lit(2.0) * p.dot(&(sigma * (gamma * z))) + g
}

/// The full Hamiltonian ℋ:
/// `pᵀb + tr{qᵀσ} + f + ½tr{DᵀPD} + 2pᵀσΓz + pᵀDΓDᵀp`, `D = σ(t,x,u) − σ(t,X̄,ū)`.
///
/// Terms are summed as `H + ½tr{DᵀPD} + pᵀDΓDᵀp` so that with `D = 0` the
/// result is bit-identical to [`hamiltonian_from_parts`].
#[allow(clippy::too_many_arguments)]
pub fn full_hamiltonian_from_parts<T: Real>(
    p: &DVector<T>,
    b: &DVector<T>,
    q: &DMatrix<T>,
    sigma: &DMatrix<T>,
    sigma_bar: &DMatrix<T>,
    gamma: &DMatrix<T>,
    z: &DVector<T>,
    f: T,
    p2: &DMatrix<T>,
) -> T {
    let d = sigma - sigma_bar;
    let h = hamiltonian_from_parts(p, b, q, sigma, gamma, z, f);
    let second = linalg::trace_product(&d.transpose(), &(p2 * &d)) * T::lit(0.5);
    let dp = d.transpose() * p;
    h + second + dp.dot(&(gamma * &dp))
}

fn running_cost<T: Real>(model: &LqModel<T>, i: usize, x: &DVector<T>, u: &DVector<T>) -> T {
    (x.dot(&(model.m.at(i) * x)) + u.dot(&(model.n.at(i) * u))) * T::lit(0.5)
}

/// `H(t_i, x, z, u, p, q)` at the LQ instantiation.
pub fn hamiltonian_h<T: Real>(
    model: &LqModel<T>,
    i: usize,
    x: &DVector<T>,
    z: &DVector<T>,
    u: &DVector<T>,
    p: &DVector<T>,
    q: &DMatrix<T>,
) -> T {
    let b = model.a.at(i) * x + model.b.at(i) * u;
    hamiltonian_from_parts(p, &b, q, model.sigma.at(i), model.gamma.matrix(), z, running_cost(model, i, x, u))
}

/// ℋ at the LQ instantiation; `σ` is control-independent, so `D = 0`.
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian_full<T: Real>(
    model: &LqModel<T>,
    i: usize,
    x: &DVector<T>,
    z: &DVector<T>,
    u: &DVector<T>,
    p: &DVector<T>,
    q: &DMatrix<T>,
    p2: &DMatrix<T>,
) -> T {
    let b = model.a.at(i) * x + model.b.at(i) * u;
    let s = model.sigma.at(i);
    full_hamiltonian_from_parts(p, &b, q, s, s, model.gamma.matrix(), z, running_cost(model, i, x, u), p2)
}

/// `∂H/∂u = Bᵀp + Nu`.
pub fn hamiltonian_grad_u<T: Real>(model: &LqModel<T>, i: usize, u: &DVector<T>, p: &DVector<T>) -> DVector<T> {
    model.b.at(i).transpose() * p + model.n.at(i) * u
}

/// Adjoint coefficients along the optimal trajectory.
#[derive(Debug, Clone)]
pub struct AdjointBundle<T: Real> {
    /// `P(t)`, so that `p(t) = P(t)X̄(t)`.
    pub p_coefficient: MatrixPath<T>,
    /// `q(t) = P(t)Σ(t)`.
    pub q: MatrixPath<T>,
    /// LQ-reduced second-order adjoint `P₂`.
    pub second_order: RiccatiSolution<T>,
}

pub fn adjoint_bundle<T: Real>(model: &LqModel<T>, riccati: &RiccatiSolution<T>) -> Result<AdjointBundle<T>> {
    riccati.ensure_complete()?;
    let q = (0..model.grid.len()).map(|i| riccati.at(i) * model.sigma.at(i)).collect();
    Ok(AdjointBundle {
        p_coefficient: riccati.p.clone(),
        q: MatrixPath::from_samples(model.grid, q)?,
        second_order: riccati::solve_second_order_adjoint_lq(model, riccati)?,
    })
}

/// Pointwise Frobenius norm of `dP/dt + AᵀP + PA + M + 2PΣΓΣᵀP − PBN⁻¹BᵀP`,
/// with `dP/dt` from fourth-order finite differences of `p`.
pub fn adjoint_residual<T: Real>(model: &LqModel<T>, p: &MatrixPath<T>) -> Result<ScalarPath<T>> {
    if p.grid().steps() != model.grid.steps() {
        return Err(Error::Grid("P is sampled on a different grid".into()));
    }
    let dp = p.derivative()?;
    let res = (0..model.grid.len())
        .map(|i| {
            let rhs = riccati::lq_riccati_rhs(model, model.grid.time(i), p.at(i))?;
            Ok((dp.at(i) - rhs).norm())
        })
        .collect::<Result<Vec<_>>>()?;
    ScalarPath::from_samples(model.grid, res)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmpSampling {
    /// Control draws per checked (path, time).
    pub draws: usize,
    pub radius: f64,
    /// Check every `stride`-th grid time.
    pub stride: usize,
    pub seed: u64,
}

impl Default for SmpSampling {
    fn default() -> Self {
        Self { draws: 100, radius: 5.0, stride: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmpWitness {
    pub path: usize,
    pub step: usize,
    pub time: f64,
    pub u: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmpReport {
    pub checked_points: usize,
    pub draws_per_point: usize,
    /// `min[H(u) − H(ū)]` over all draws.
    pub min_gap: f64,
    /// `max|∂H/∂u(ū)|`.
    pub max_gradient: f64,
    /// Draws where `ℋ(u) − ℋ(ū)` and `H(u) − H(ū)` differ in any bit.
    pub reduction_mismatches: usize,
    pub gap_tolerance: f64,
    pub gradient_tolerance: f64,
    pub gap_violations: Vec<SmpWitness>,
    pub gradient_violations: Vec<SmpWitness>,
}

impl SmpReport {
    pub fn passed(&self) -> bool {
        self.checked_points > 0
            && self.gap_violations.is_empty()
            && self.gradient_violations.is_empty()
            && self.reduction_mismatches == 0
    }
}

pub const GAP_TOLERANCE: f64 = 1e-10;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;

fn draw_in_ball(rng: &mut crate::random::NormalStream, k: usize, radius: f64) -> Vec<f64> {
    let dir: Vec<f64> = (0..k).map(|_| rng.next::<f64>()).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let r = radius * rng.uniform().powf(1.0 / k as f64);
    dir.into_iter().map(|v| v / norm * r).collect()
}

/// Checks `H(u) ≥ H(ū)` and `∂H/∂u(ū) = 0` along the recorded paths of a
/// bundle simulated under the feedback being tested.
pub fn check_smp_inequality<T: Real>(
    model: &LqModel<T>,
    riccati: &RiccatiSolution<T>,
    bundle: &PathBundle<T>,
    sampling: SmpSampling,
) -> Result<SmpReport> {
    let adj = adjoint_bundle(model, riccati)?;
    if bundle.recorded.is_empty() {
        return Err(Error::Precondition("bundle has no recorded trajectories".into()));
    }
    if sampling.stride == 0 {
        return Err(Error::Precondition("stride must be positive".into()));
    }
    let k = model.control_dim();
    let mut report = SmpReport {
        checked_points: 0,
        draws_per_point: sampling.draws,
        min_gap: f64::INFINITY,
        max_gradient: 0.0,
        reduction_mismatches: 0,
        gap_tolerance: GAP_TOLERANCE,
        gradient_tolerance: GRADIENT_TOLERANCE,
        gap_violations: vec![],
        gradient_violations: vec![],
    };
    // control draws use streams disjoint from the path streams
    let draws_source = RandomSource::new(sampling.seed, u64::MAX / 2);
    for rec in &bundle.recorded {
        let mut rng = draws_source.substream(u64::MAX / 2 + rec.index as u64).normals();
        for i in (0..model.grid.len()).step_by(sampling.stride) {
            let x = &rec.states[i];
            let ubar = &rec.controls[i];
            let p = adj.p_coefficient.at(i) * x;
            let q = adj.q.at(i);
            let z = model.sigma.at(i).transpose() * &p;
            let p2 = adj.second_order.at(i);
            let t = model.grid.time(i).as_f64();
            let h_bar = hamiltonian_h(model, i, x, &z, ubar, &p, q);
            let hf_bar = hamiltonian_full(model, i, x, &z, ubar, &p, q, p2);
            let grad = hamiltonian_grad_u(model, i, ubar, &p).amax().as_f64();
            report.checked_points += 1;
            report.max_gradient = report.max_gradient.max(grad);
            if grad > GRADIENT_TOLERANCE {
                report.gradient_violations.push(SmpWitness {
                    path: rec.index,
                    step: i,
                    time: t,
                    u: ubar.iter().map(|v| v.as_f64()).collect(),
                    value: grad,
                });
            }
            for _ in 0..sampling.draws {
                let offset = draw_in_ball(&mut rng, k, sampling.radius);
                let u = ubar + DVector::from_iterator(k, offset.iter().map(|&v| T::lit(v)));
                let gap = hamiltonian_h(model, i, x, &z, &u, &p, q) - h_bar;
                let full_gap = hamiltonian_full(model, i, x, &z, &u, &p, q, p2) - hf_bar;
                if gap.as_f64().to_bits() != full_gap.as_f64().to_bits() {
                    report.reduction_mismatches += 1;
                }
                let g = gap.as_f64();
                report.min_gap = report.min_gap.min(g);
                if g < -GAP_TOLERANCE {
                    report.gap_violations.push(SmpWitness {
                        path: rec.index,
                        step: i,
                        time: t,
                        u: u.iter().map(|v| v.as_f64()).collect(),
                        value: g,
                    });
                }
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondOrderReport {
    pub initial: Vec<f64>,
    /// `‖P₂(T) − H‖`.
    pub terminal_error: f64,
    pub min_eigenvalue: f64,
    /// `M ≥ 0` and `H ≥ 0`, so `P₂` should stay positive semidefinite.
    pub psd_expected: bool,
    pub psd_holds: bool,
}

pub fn second_order_adjoint_report<T: Real>(
    model: &LqModel<T>,
    riccati: &RiccatiSolution<T>,
) -> Result<SecondOrderReport> {
    let p2 = riccati::solve_second_order_adjoint_lq(model, riccati)?;
    let tol = T::lit(linalg::DEFINITENESS_TOL);
    let psd_expected = linalg::is_psd(&model.h, tol) && model.m.values().iter().all(|m| linalg::is_psd(m, tol));
    let min_eig = p2
        .p
        .values()
        .iter()
        .map(linalg::min_eigenvalue)
        .fold(T::lit(f64::INFINITY), |a, b| a.min(b))
        .as_f64();
    Ok(SecondOrderReport {
        initial: p2.initial().iter().map(|v| v.as_f64()).collect(),
        terminal_error: (p2.p.last() - &model.h).norm().as_f64(),
        min_eigenvalue: min_eig,
        psd_expected,
        psd_holds: min_eig >= -1e-10,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::linalg::{dmat, dvec};
    use crate::model::GammaMatrix;

    fn scalar(n_cost: f64) -> LqModel<f64> {
        LqModel::constant(
            TimeGrid::new(1.0, 100).unwrap(),
            dmat(1, 1, &[0.0]),
            dmat(1, 1, &[1.0]),
            dmat(1, 1, &[1.0]),
            dmat(1, 1, &[0.0]),
            dmat(1, 1, &[n_cost]),
            dmat(1, 1, &[1.0]),
            GammaMatrix::scalar(1, 0.25).unwrap(),
            dvec(&[1.0]),
        )
    }

    #[test]
    fn hamiltonian_quadratic_completion() {
        let model = scalar(2.0);
        let (x, z, p, q) = (dvec(&[0.7]), dvec(&[0.3]), dvec(&[0.4]), dmat(1, 1, &[0.2]));
        let ubar = -(dvec(&[0.4]) / 2.0); // −N⁻¹Bᵀp
        let grad = hamiltonian_grad_u(&model, 3, &ubar, &p);
        assert!(grad[0].abs() < 1e-15);
        let u = &ubar + dvec(&[1.0]);
        let diff = hamiltonian_h(&model, 3, &x, &z, &u, &p, &q) - hamiltonian_h(&model, 3, &x, &z, &ubar, &p, &q);
        assert!((diff - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_inputs_leave_trace_term() {
        let model = scalar(1.0);
        let zero = dvec(&[0.0]);
        let q = dmat(1, 1, &[0.0]);
        assert_eq!(hamiltonian_h(&model, 0, &zero, &zero, &zero, &zero, &q), 0.0);
        let q = dmat(1, 1, &[0.3]);
        assert_eq!(hamiltonian_h(&model, 0, &zero, &zero, &zero, &zero, &q), 0.3);
    }

    #[test]
    fn full_hamiltonian_adds_diffusion_terms() {
        let (p, b, q) = (dvec(&[1.0]), dvec(&[0.0]), dmat(1, 1, &[0.0]));
        let g = dmat(1, 1, &[0.5]);
        let z = dvec(&[0.0]);
        let s = dmat(1, 1, &[2.0]);
        let s_bar = dmat(1, 1, &[1.0]);
        let p2 = dmat(1, 1, &[4.0]);
        // H = 2pᵀσΓz = 0, ½tr{DᵀPD} = 2, pᵀDΓDᵀp = 0.5
        let v = full_hamiltonian_from_parts(&p, &b, &q, &s, &s_bar, &g, &z, 0.0, &p2);
        assert_eq!(v, 2.5);
    }

    #[test]
    fn residual_of_riccati_solution_is_small_and_sensitive() {
        let model = scalar(1.0).on_grid(TimeGrid::new(1.0, 1000).unwrap());
        let ric = riccati::solve_riccati_lq(&model).unwrap();
        let r = adjoint_residual(&model, &ric.p).unwrap();
        assert!(r.max_value() < 1e-9, "{}", r.max_value());
        let bumped = ric.p.map(|p| p + DMatrix::identity(1, 1) * 1e-3);
        assert!(adjoint_residual(&model, &bumped).unwrap().max_value() > 1e-4);
    }

    #[test]
    fn second_order_report_terminal_and_psd() {
        let model = scalar(1.0);
        let ric = riccati::solve_riccati_lq(&model).unwrap();
        let rep = second_order_adjoint_report(&model, &ric).unwrap();
        assert_eq!(rep.terminal_error, 0.0);
        assert!(rep.psd_expected && rep.psd_holds);
    }
}
