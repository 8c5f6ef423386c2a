//! Linear-quadratic problem with asymmetric risk sensitivity: optimal
//! feedback `ū = −N⁻¹BᵀPX`, optimal value, the explicit BSDE solution along
//! a path, and Monte Carlo validation in the symmetric case `Γ = (θ/2)I`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::LqModel;
use crate::path::{MatrixPath, ScalarPath};
use crate::riccati::{self, BoundsReport, RiccatiSolution, Wellposedness};
use crate::scalar::Real;
use crate::sde::{self, MomentEstimate, SimulationOptions};

/// Monte Carlo samples below this count cannot certify agreement.
pub const MIN_VALIDATION_PATHS: usize = 1000;
/// Pass threshold on `|z|`.
pub const Z_THRESHOLD: f64 = 3.0;

/// `K(t) = −N⁻¹(t)Bᵀ(t)P(t)` on the grid.
pub fn feedback_gain<T: Real>(model: &LqModel<T>, riccati: &RiccatiSolution<T>) -> Result<MatrixPath<T>> {
    riccati.ensure_complete()?;
    let gains = (0..model.grid.len())
        .map(|i| {
            let n_inv = linalg::inverse(model.n.at(i), "N(t)")?;
            Ok(-(n_inv * model.b.at(i).transpose() * riccati.at(i)))
        })
        .collect::<Result<Vec<_>>>()?;
    MatrixPath::from_samples(model.grid, gains)
}

/// `∫_{t_i}^T tr{P(ΣΣᵀ)} ds` at every node.
pub fn trace_tail<T: Real>(model: &LqModel<T>, riccati: &RiccatiSolution<T>) -> ScalarPath<T> {
    let integrand: Vec<T> = (0..model.grid.len())
        .map(|i| {
            let s = model.sigma.at(i);
            linalg::trace_product(riccati.at(i), &(s * s.transpose()))
        })
        .collect();
    ScalarPath::from_raw(model.grid, crate::path::tail_integrals(&integrand, model.grid.dt()))
}

#[derive(Debug, Clone)]
pub struct LqSolution<T: Real> {
    pub riccati: RiccatiSolution<T>,
    pub gain: MatrixPath<T>,
    /// `½x₀ᵀP(0)x₀`.
    pub quadratic_part: T,
    /// `½∫₀ᵀ tr{P(ΣΣᵀ)} dt`.
    pub trace_part: T,
    pub optimal_value: T,
    pub wellposedness: Wellposedness,
    /// Present when the well-posedness hypothesis holds.
    pub bounds: Option<BoundsReport>,
}

pub fn solve_lq<T: Real>(model: &LqModel<T>) -> Result<LqSolution<T>> {
    let ric = riccati::solve_riccati_lq(model)?;
    ric.ensure_complete()?;
    let gain = feedback_gain(model, &ric)?;
    let half = T::lit(0.5);
    let x0 = &model.x0;
    let quadratic_part = x0.dot(&(ric.initial() * x0)) * half;
    let trace_part = trace_tail(model, &ric).first().to_owned() * half;
    let bounds = match ric.wellposedness {
        Wellposedness::Verified => Some(riccati::riccati_bounds_check(model, &ric)?),
        Wellposedness::Unverified => None,
    };
    Ok(LqSolution {
        wellposedness: ric.wellposedness,
        riccati: ric,
        gain,
        quadratic_part,
        trace_part,
        optimal_value: quadratic_part + trace_part,
        bounds,
    })
}

/// `Ȳ(t) = ½XᵀPX + ½∫_t^T tr{PΣΣᵀ}` and `Z̄(t) = ΣᵀPX` along a state path
/// given at every grid node.
pub fn closed_form_bsde<T: Real>(
    model: &LqModel<T>,
    riccati: &RiccatiSolution<T>,
    states: &[DVector<T>],
) -> Result<(Vec<T>, Vec<DVector<T>>)> {
    if states.len() != model.grid.len() {
        return Err(Error::Dimension {
            what: "state path",
            expected: format!("{} nodes", model.grid.len()),
            found: format!("{} nodes", states.len()),
        });
    }
    let tail = trace_tail(model, riccati);
    let half = T::lit(0.5);
    let mut ys = Vec::with_capacity(states.len());
    let mut zs = Vec::with_capacity(states.len());
    for (i, x) in states.iter().enumerate() {
        let px = riccati.at(i) * x;
        ys.push(x.dot(&px) * half + *tail.at(i) * half);
        zs.push(model.sigma.at(i).transpose() * px);
    }
    Ok((ys, zs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationStatus {
    Pass,
    Fail,
    /// Too few paths, or the exponential sample is heavy-tailed.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationResult {
    /// Constant added to every entry of the optimal gain.
    pub shift: f64,
    pub estimate: MomentEstimate,
    /// `estimate ≥ formula − 3·stderr`.
    pub not_better: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymmetricValidation {
    pub theta: f64,
    pub formula: f64,
    pub estimate: MomentEstimate,
    pub z_score: f64,
    pub status: ValidationStatus,
    pub perturbations: Vec<PerturbationResult>,
}

impl SymmetricValidation {
    pub fn passed(&self) -> bool {
        self.status == ValidationStatus::Pass && self.perturbations.iter().all(|p| p.not_better)
    }
}

/// Compares the optimal value formula with `(1/θ)log E[exp{θ·cost}]` under
/// the optimal feedback, where `Γ = (θ/2)I`. Each entry of `gain_shifts`
/// additionally simulates the perturbed gain `K + shift` on fresh streams.
pub fn validate_symmetric_case<T: Real>(
    model: &LqModel<T>,
    opts: SimulationOptions,
    gain_shifts: &[T],
) -> Result<SymmetricValidation> {
    let gamma = model
        .gamma
        .scalar_value(T::lit(1e-12))
        .ok_or_else(|| Error::Precondition("symmetric validation needs a scalar Gamma".into()))?;
    let theta = gamma * T::lit(2.0);
    let sol = solve_lq(model)?;
    let formula = sol.optimal_value.as_f64();
    let bundle = sde::simulate_lq_with_gain(model, &sol.gain, opts)?;
    let estimate = sde::estimate_symmetric_value(model, &bundle, theta)?;
    let z_score = estimate.z_score(formula);
    let status = if estimate.heavy_tail || opts.n_paths < MIN_VALIDATION_PATHS {
        ValidationStatus::Inconclusive
    } else if z_score.abs() <= Z_THRESHOLD {
        ValidationStatus::Pass
    } else {
        ValidationStatus::Fail
    };
    let mut perturbations = Vec::with_capacity(gain_shifts.len());
    for (k, &shift) in gain_shifts.iter().enumerate() {
        let gain = sol.gain.map(|g| g.map(|v| v + shift));
        let popts = SimulationOptions {
            seed: opts.seed.wrapping_add(k as u64 + 1),
            ..opts
        };
        let b = sde::simulate_lq_with_gain(model, &gain, popts)?;
        let e = sde::estimate_symmetric_value(model, &b, theta)?;
        perturbations.push(PerturbationResult {
            shift: shift.as_f64(),
            not_better: e.estimate >= formula - Z_THRESHOLD * e.stderr,
            estimate: e,
        });
    }
    Ok(SymmetricValidation {
        theta: theta.as_f64(),
        formula,
        estimate,
        z_score,
        status,
        perturbations,
    })
}

/// Risk-neutral limit used for continuity checks: the same model with a
/// negligible scalar Γ.
pub fn risk_neutral_value<T: Real>(model: &LqModel<T>) -> Result<T> {
    let d = model.noise_dim();
    let g = crate::model::GammaMatrix::unchecked(DMatrix::zeros(d, d));
    let m = model.with_gamma(g);
    // validation rejects Γ = 0, so integrate the Riccati equation directly
    let run = riccati::ode::rk4_backward(
        &m.grid,
        m.h.clone(),
        |t, p| riccati::lq_riccati_rhs(&m, t, p).expect("N(t) invertible"),
        linalg::symmetrize_in_place,
        T::lit(f64::INFINITY),
    );
    let ric = RiccatiSolution {
        p: MatrixPath::from_samples(m.grid, run.values)?,
        blowup_flag: false,
        blowup_at: None,
        max_norm: run.max_norm,
        threshold: T::lit(f64::INFINITY),
        valid_from: 0,
        wellposedness: Wellposedness::Verified,
    };
    let half = T::lit(0.5);
    Ok(m.x0.dot(&(ric.initial() * &m.x0)) * half + *trace_tail(&m, &ric).first() * half)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::linalg::{dmat, dvec};
    use crate::model::GammaMatrix;

    fn scalar(m: f64, h: f64, steps: usize) -> LqModel<f64> {
        LqModel::constant(
            TimeGrid::new(1.0, steps).unwrap(),
            dmat(1, 1, &[0.0]),
            dmat(1, 1, &[1.0]),
            dmat(1, 1, &[1.0]),
            dmat(1, 1, &[m]),
            dmat(1, 1, &[1.0]),
            dmat(1, 1, &[h]),
            GammaMatrix::scalar(1, 0.25).unwrap(),
            dvec(&[1.0]),
        )
    }

    #[test]
    fn scalar_value_formula() {
        let sol = solve_lq(&scalar(0.0, 1.0, 1000)).unwrap();
        let expected = 1.0 / 3.0 + 1.5f64.ln();
        assert!((sol.optimal_value - expected).abs() < 1e-10, "{}", sol.optimal_value);
        assert!((2.0 * sol.trace_part - 2.0 * 1.5f64.ln()).abs() < 1e-10);
        assert!(sol.bounds.as_ref().unwrap().holds());
        assert!((sol.gain.first()[(0, 0)] + 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_costs_give_zero_gain_and_value() {
        let sol = solve_lq(&scalar(0.0, 0.0, 100)).unwrap();
        assert!(sol.gain.values().iter().all(|k| k[(0, 0)] == 0.0));
        assert_eq!(sol.optimal_value, 0.0);
    }

    #[test]
    fn closed_form_bsde_identities() {
        let model = scalar(0.0, 1.0, 200);
        let sol = solve_lq(&model).unwrap();
        let path: Vec<DVector<f64>> = (0..=200).map(|i| dvec(&[1.0 + 0.01 * i as f64])).collect();
        let (y, z) = closed_form_bsde(&model, &sol.riccati, &path).unwrap();
        let xt = path[200][0];
        assert_eq!(y[200], 0.5 * xt * xt);
        assert_eq!(y[0], sol.optimal_value);
        assert!((z[0][0] - 2.0 / 3.0).abs() < 1e-12);
        assert!(closed_form_bsde(&model, &sol.riccati, &path[..10]).is_err());
    }

    #[test]
    fn scale_covariance_in_x0() {
        let model = scalar(0.5, 1.0, 100);
        let a = solve_lq(&model).unwrap();
        let b = solve_lq(&model.with_x0(dvec(&[3.0]))).unwrap();
        assert!((b.quadratic_part - 9.0 * a.quadratic_part).abs() < 1e-13);
        assert_eq!(a.trace_part, b.trace_part);
    }

    #[test]
    fn small_gamma_is_close_to_risk_neutral() {
        let model = scalar(0.5, 1.0, 400).with_gamma(GammaMatrix::scalar(1, 1e-6).unwrap());
        let v = solve_lq(&model).unwrap().optimal_value;
        let rn = risk_neutral_value(&model).unwrap();
        assert!((v - rn).abs() < 1e-4 && v > rn);
    }

    #[test]
    fn tiny_sample_is_inconclusive() {
        let model = scalar(0.0, 1.0, 50);
        let v = validate_symmetric_case(&model, SimulationOptions::new(10, 1), &[]).unwrap();
        assert_eq!(v.status, ValidationStatus::Inconclusive);
    }
}
