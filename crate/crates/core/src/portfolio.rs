//! Factor-model portfolio problem: coefficient blocks, the optimal affine
//! feedback strategy and its risk-sensitized growth rate, and Monte Carlo
//! comparison of strategies in the symmetric case `Γ = (θ/4)I`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::FactorMarketModel;
use crate::path::{ScalarPath, VectorPath};
use crate::riccati::{self, FactorCoefficients, PiEquationForm, RiccatiSolution};
use crate::scalar::Real;
use crate::sde::{self, AffineFeedback, FeedbackStrategy, MomentEstimate, SimulationOptions};

/// `Θ`, `Ξ`, `Ψ` and the smallest eigenvalue of `Ψ − ΞᵀΘ⁻¹Ξ`.
#[derive(Debug, Clone)]
pub struct ThetaXiPsi<T: Real> {
    pub theta: DMatrix<T>,
    pub xi: DMatrix<T>,
    pub psi: DMatrix<T>,
    pub schur_min_eigenvalue: T,
    /// Whether `Ψ − ΞᵀΘ⁻¹Ξ > 0`.
    pub bound_hypothesis: bool,
}

pub fn build_theta_xi_psi<T: Real>(model: &FactorMarketModel<T>) -> Result<ThetaXiPsi<T>> {
    let c = FactorCoefficients::new(model)?;
    Ok(ThetaXiPsi {
        bound_hypothesis: c.schur_positive(),
        schur_min_eigenvalue: c.schur_min_eigenvalue,
        theta: c.theta,
        xi: c.xi,
        psi: c.psi,
    })
}

#[derive(Debug, Clone)]
pub struct PortfolioSolution<T: Real> {
    pub coefficients: FactorCoefficients<T>,
    pub pi: RiccatiSolution<T>,
    pub phi: VectorPath<T>,
    pub kappa: ScalarPath<T>,
    /// `ū(t, x) = Θ⁻¹[(A − ΞΠ(t))x − Ξφ(t) + (a − r(t)𝟏)]`.
    pub strategy: AffineFeedback<T>,
    /// `½x₀ᵀΠ(0)x₀ + φ(0)ᵀx₀ − κ(0)`.
    pub optimal_growth: T,
    /// `a-priori bound on ‖Π‖`, meaningful when the Schur complement is positive.
    pub pi_bound: T,
}

impl<T: Real> PortfolioSolution<T> {
    /// Whether `Π(t) ≥ 0` and `‖Π(t)‖ ≤ B_Π` hold at every node.
    pub fn pi_bounds_hold(&self) -> bool {
        let tol = T::lit(1e-9) * self.pi_bound.max(T::one());
        self.pi.p.values().iter().all(|p| {
            crate::linalg::min_eigenvalue(p) >= -tol && p.norm() <= self.pi_bound + tol
        })
    }
}

/// Growth rate implied by `(Π, φ, κ)` at `x₀`.
pub fn growth_from_coefficients<T: Real>(x0: &DVector<T>, pi0: &DMatrix<T>, phi0: &DVector<T>, kappa0: T) -> T {
    x0.dot(&(pi0 * x0)) * T::lit(0.5) + phi0.dot(x0) - kappa0
}

pub fn solve_portfolio<T: Real>(model: &FactorMarketModel<T>) -> Result<PortfolioSolution<T>> {
    solve_portfolio_with_form(model, PiEquationForm::Derived)
}

pub fn solve_portfolio_with_form<T: Real>(
    model: &FactorMarketModel<T>,
    form: PiEquationForm,
) -> Result<PortfolioSolution<T>> {
    let c = FactorCoefficients::new(model)?;
    let (pi, phi) = riccati::solve_pi_phi(model, form)?;
    pi.ensure_complete()?;
    let kappa = riccati::solve_kappa(model, &pi, &phi)?;
    let grid = model.grid;
    let mut slopes = Vec::with_capacity(grid.len());
    let mut intercepts = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        slopes.push(&c.theta_inv * (&model.loading - &c.xi * pi.at(i)));
        let excess = model.excess_intercept(*model.rate.at(i));
        intercepts.push(&c.theta_inv * (excess - &c.xi * phi.at(i)));
    }
    let optimal_growth = growth_from_coefficients(&model.x0, pi.initial(), phi.first(), *kappa.first());
    Ok(PortfolioSolution {
        pi_bound: c.pi_bound(model),
        coefficients: c,
        pi,
        phi,
        kappa,
        strategy: AffineFeedback { name: "optimal".into(), slopes, intercepts },
        optimal_growth,
    })
}

/// Max-norm residuals of `(Π, φ, κ)` in the classical symmetric form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DegenerationResiduals {
    pub theta: f64,
    pub pi: f64,
    pub phi: f64,
    pub kappa: f64,
}

impl DegenerationResiduals {
    pub fn max(&self) -> f64 {
        self.pi.max(self.phi).max(self.kappa)
    }
}

/// Substitutes the computed `(Π, φ, κ)` into the risk-sensitive equations
/// written with `K₀ = (θ/2)Λ[I − θ/(θ+2)Σᵀ(ΣΣᵀ)⁻¹Σ]Λᵀ` and
/// `K₁ = B − θ/(θ+2)ΛΣᵀ(ΣΣᵀ)⁻¹A`, which is what the asymmetric equations
/// reduce to at `Γ = (θ/4)I`. Derivatives come from fourth-order finite
/// differences of the stored paths, so the residual also measures the ODE
/// discretisation error.
pub fn kuroda_nagai_residuals<T: Real>(
    model: &FactorMarketModel<T>,
    sol: &PortfolioSolution<T>,
    theta: T,
) -> Result<DegenerationResiduals> {
    let target = theta / T::lit(4.0);
    match model.gamma.scalar_value(T::lit(1e-12)) {
        Some(g) if (g - target).abs() <= T::lit(1e-12) => {}
        _ => return Err(Error::Precondition("residual check needs Gamma = (theta/4) I".into())),
    }
    sol.pi.ensure_complete()?;
    let two = T::lit(2.0);
    let half = T::lit(0.5);
    let rho = theta / (theta + two);
    let c2 = two / (theta + two);
    let (s, l) = (&model.sigma, &model.lambda);
    let d = s.ncols();
    let ss_inv = crate::linalg::inverse(&(s * s.transpose()), "Sigma Sigma^T")?;
    let proj = s.transpose() * &ss_inv * s;
    let k0 = l * (DMatrix::identity(d, d) - proj * rho) * l.transpose() * (theta * half);
    let ls_ss = l * s.transpose() * &ss_inv;
    let k1 = &model.mean_reversion - &ls_ss * &model.loading * rho;
    let at_ss_a = model.loading.transpose() * &ss_inv * &model.loading * c2;
    let ll = l * l.transpose();

    let dpi = sol.pi.p.derivative()?;
    let dphi = sol.phi.derivative()?;
    let dkappa = sol.kappa.derivative()?;
    let mut res = DegenerationResiduals { theta: theta.as_f64(), pi: 0.0, phi: 0.0, kappa: 0.0 };
    for i in 0..model.grid.len() {
        let pi = sol.pi.at(i);
        let phi = sol.phi.at(i);
        let r = *model.rate.at(i);
        let ex = model.excess_intercept(r);
        let pi_rhs = pi * &k0 * pi - k1.transpose() * pi - pi * &k1 - &at_ss_a;
        res.pi = res.pi.max((dpi.at(i) - pi_rhs).amax().as_f64());
        let forcing = &model.b - &ls_ss * &ex * rho;
        let phi_rhs = -((k1.transpose() - pi * &k0) * phi
            + pi * forcing
            + model.loading.transpose() * (&ss_inv * &ex) * c2);
        res.phi = res.phi.max((dphi.at(i) - phi_rhs).amax().as_f64());
        let bracket = crate::linalg::trace_product(&ll, pi) + two * r + two * model.b.dot(phi)
            - phi.dot(&(&k0 * phi))
            - two * rho * phi.dot(&(&ls_ss * &ex))
            + c2 * ex.dot(&(&ss_inv * &ex));
        // κ' = −l with l = −½[...]
        let kappa_rhs = bracket * half;
        res.kappa = res.kappa.max((*dkappa.at(i) - kappa_rhs).abs().as_f64());
    }
    Ok(res)
}

/// Named strategy constructors available to callers and the CLI.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StrategyKind {
    Optimal,
    Zero,
    /// The optimal strategy multiplied by `factor`.
    Scaled { factor: f64 },
    ConstantWeights { weights: Vec<f64> },
}

impl StrategyKind {
    pub fn label(&self) -> String {
        match self {
            StrategyKind::Optimal => "optimal".into(),
            StrategyKind::Zero => "zero".into(),
            StrategyKind::Scaled { factor } => format!("scaled({factor})"),
            StrategyKind::ConstantWeights { weights } => {
                let w: Vec<String> = weights.iter().map(|w| w.to_string()).collect();
                format!("constant({})", w.join(","))
            }
        }
    }

    pub fn build<T: Real>(&self, model: &FactorMarketModel<T>, sol: &PortfolioSolution<T>) -> Result<AffineFeedback<T>> {
        let label = self.label();
        Ok(match self {
            StrategyKind::Optimal => sol.strategy.clone(),
            StrategyKind::Zero => AffineFeedback::zero(&model.grid, model.assets(), model.factors()),
            StrategyKind::Scaled { factor } => sol.strategy.scaled(T::lit(*factor), label),
            StrategyKind::ConstantWeights { weights } => {
                if weights.len() != model.assets() {
                    return Err(Error::Dimension {
                        what: "constant weights",
                        expected: model.assets().to_string(),
                        found: weights.len().to_string(),
                    });
                }
                AffineFeedback::constant(label, &model.grid, model.factors(), crate::linalg::dvec(weights))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyRow {
    pub strategy: String,
    pub estimate: MomentEstimate,
    pub control_bound_exceeded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyComparison {
    pub theta: f64,
    pub formula_growth: f64,
    pub rows: Vec<StrategyRow>,
    /// The optimal strategy's estimate is at least every other estimate minus
    /// 3 standard errors (the larger of the two rows').
    pub optimal_within_top: bool,
    /// Some estimate was flagged heavy-tailed.
    pub inconclusive: bool,
}

/// Monte Carlo growth rates `I(u)` for each strategy; needs `Γ = (θ/4)I`.
///
/// All strategies share the same Brownian streams, so differences between
/// rows come from the strategies alone.
pub fn compare_strategies<T: Real>(
    model: &FactorMarketModel<T>,
    strategies: &[StrategyKind],
    opts: SimulationOptions,
    theta: f64,
) -> Result<StrategyComparison> {
    let target = T::lit(theta / 4.0);
    match model.gamma.scalar_value(T::lit(1e-12)) {
        Some(g) if (g - target).abs() <= T::lit(1e-12) => {}
        _ => {
            return Err(Error::Precondition(format!(
                "Monte Carlo growth needs Gamma = (theta/4) I = {} I",
                theta / 4.0
            )))
        }
    }
    let sol = solve_portfolio(model)?;
    let mut rows = Vec::with_capacity(strategies.len());
    for kind in strategies {
        let strat = kind.build(model, &sol)?;
        let b = sde::simulate_factor_and_wealth(model, &strat as &dyn FeedbackStrategy<T>, opts)?;
        rows.push(StrategyRow {
            strategy: kind.label(),
            estimate: sde::estimate_growth_rate(&b.valid_log_wealth(), theta)?,
            control_bound_exceeded: b.control_bound_exceeded,
        });
    }
    let optimal: Vec<&MomentEstimate> = strategies
        .iter()
        .zip(&rows)
        .filter(|(s, _)| **s == StrategyKind::Optimal)
        .map(|(_, r)| &r.estimate)
        .collect();
    let optimal_within_top = optimal.iter().all(|o| {
        rows.iter().all(|r| o.estimate >= r.estimate.estimate - 3.0 * o.stderr.max(r.estimate.stderr))
    });
    Ok(StrategyComparison {
        theta,
        formula_growth: sol.optimal_growth.as_f64(),
        inconclusive: rows.iter().any(|r| r.estimate.heavy_tail),
        rows,
        optimal_within_top,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::linalg::{dmat, dvec};
    use crate::model::GammaMatrix;

    fn market(a: f64, loading: f64, gamma: GammaMatrix<f64>, steps: usize) -> FactorMarketModel<f64> {
        let grid = TimeGrid::new(1.0, steps).unwrap();
        FactorMarketModel {
            a: dvec(&[a]),
            b: dvec(&[0.0]),
            loading: dmat(1, 1, &[loading]),
            mean_reversion: dmat(1, 1, &[0.0]),
            lambda: dmat(1, 2, &[0.0, 0.1]),
            sigma: dmat(1, 2, &[0.2, 0.0]),
            rate: ScalarPath::constant(grid, 0.02),
            gamma,
            x0: dvec(&[0.0]),
            grid,
        }
    }

    #[test]
    fn zero_loading_closed_form() {
        let m = market(0.06, 0.0, GammaMatrix::diagonal(&[0.1, 0.3]).unwrap(), 100);
        let sol = solve_portfolio(&m).unwrap();
        let u = sol.strategy.eval(0, &dvec(&[5.0]));
        assert!((u[0] - 0.04 / 0.048).abs() < 1e-12);
        let expected = 0.02 + 0.5 * 0.04 * 0.04 / 0.048;
        assert!((sol.optimal_growth - expected).abs() < 1e-12);
        assert_eq!(*sol.kappa.last(), 0.0);
        assert_eq!(sol.phi.last()[0], 0.0);
        assert!(sol.pi_bounds_hold());
    }

    #[test]
    fn no_excess_return_means_cash_only() {
        let m = market(0.02, 0.0, GammaMatrix::diagonal(&[0.1, 0.3]).unwrap(), 50);
        let sol = solve_portfolio(&m).unwrap();
        assert!(sol.strategy.intercepts.iter().all(|c| c[0] == 0.0));
        assert!((sol.optimal_growth - 0.02).abs() < 1e-15);
    }

    #[test]
    fn symmetric_blocks() {
        let theta = 0.4;
        let m = market(0.06, 0.5, GammaMatrix::scalar(2, theta / 4.0).unwrap(), 10);
        let b = build_theta_xi_psi(&m).unwrap();
        let ss = &m.sigma * m.sigma.transpose();
        assert!((&b.theta - &ss * (1.0 + theta / 2.0)).norm() < 1e-15);
        assert!((&b.xi - &m.sigma * m.lambda.transpose() * (theta / 2.0)).norm() < 1e-15);
        assert!((&b.psi - &m.lambda * m.lambda.transpose() * (theta / 2.0)).norm() < 1e-15);
    }

    #[test]
    fn strategy_registry() {
        let m = market(0.06, 0.5, GammaMatrix::scalar(2, 0.1).unwrap(), 20);
        let sol = solve_portfolio(&m).unwrap();
        let scaled = StrategyKind::Scaled { factor: 1.5 }.build(&m, &sol).unwrap();
        let x = dvec(&[0.3]);
        assert!((scaled.eval(4, &x)[0] - 1.5 * sol.strategy.eval(4, &x)[0]).abs() < 1e-14);
        let c = StrategyKind::ConstantWeights { weights: vec![0.5] }.build(&m, &sol).unwrap();
        assert_eq!(c.eval(7, &x)[0], 0.5);
        assert!(StrategyKind::ConstantWeights { weights: vec![0.5, 0.1] }.build(&m, &sol).is_err());
        assert_eq!(StrategyKind::Scaled { factor: 1.5 }.label(), "scaled(1.5)");
    }

    #[test]
    fn comparison_requires_symmetric_gamma() {
        let m = market(0.06, 0.0, GammaMatrix::diagonal(&[0.1, 0.3]).unwrap(), 20);
        let r = compare_strategies(&m, &[StrategyKind::Optimal], SimulationOptions::new(10, 1), 0.4);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn zero_strategy_growth_is_deterministic() {
        let m = market(0.06, 0.0, GammaMatrix::scalar(2, 0.1).unwrap(), 100);
        let r = compare_strategies(&m, &[StrategyKind::Zero, StrategyKind::Zero], SimulationOptions::new(50, 3), 0.4)
            .unwrap();
        assert!((r.rows[0].estimate.estimate - 0.02).abs() < 1e-14);
        assert_eq!(r.rows[0].estimate.stderr, 0.0);
        assert_eq!(r.rows[0], r.rows[1]);
    }

    #[test]
    fn symmetric_reduction_residuals() {
        let theta = 0.4;
        let mut m = market(0.04, 0.5, GammaMatrix::scalar(2, theta / 4.0).unwrap(), 1000);
        m.b = dvec(&[0.02]);
        m.mean_reversion = dmat(1, 1, &[-1.0]);
        m.lambda = dmat(1, 2, &[0.1, 0.3]);
        m.x0 = dvec(&[0.1]);
        let mut sol = solve_portfolio(&m).unwrap();
        let r = kuroda_nagai_residuals(&m, &sol, theta).unwrap();
        assert!(r.max() < 1e-8, "{r:?}");
        assert!(kuroda_nagai_residuals(&m, &sol, 0.5).is_err());
        // a wrong κ is detected
        sol.kappa = sol.kappa.map(|k| k * 1.01);
        assert!(kuroda_nagai_residuals(&m, &sol, theta).unwrap().kappa > 1e-5);
    }
}
