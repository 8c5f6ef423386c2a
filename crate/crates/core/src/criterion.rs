//! The criterion `ε_{γ₁,γ₂}[ξ]`, its first-order expansion
//! `ε ≈ E[ξ] + γ₁D₁[ξ] + γ₂D₂[ξ]`, and the variance decomposition `(D₁, D₂)`.
//!
//! All quantities live on the lattice measure of [`crate::lattice`], so the
//! identities hold inside the discretization rather than only in the limit.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::lattice::{
    lattice_moments, lattice_solve, lattice_solve_with, Drivers, LatticeOptions, Payoff,
};
use crate::scalar::Real;

/// `E[ξ]` and the first-order coefficients `E Σ Z̄_i²Δt` of the γ = 0 solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TaylorTerms<T> {
    pub mean: T,
    pub d1: T,
    pub d2: T,
}

pub fn taylor_terms<T: Real>(xi: &Payoff<T>, grid: &TimeGrid<T>) -> Result<TaylorTerms<T>> {
    let opts = LatticeOptions { accumulate_energy: true, ..Default::default() };
    let sol = lattice_solve_with(xi, T::zero(), T::zero(), grid, opts)?;
    let e = sol.energy.expect("energy requested");
    Ok(TaylorTerms { mean: sol.y0, d1: e.first_order[0], d2: e.first_order[1] })
}

/// `ε_{γ₁,γ₂}[ξ]` for each pair in `gammas`.
pub fn criterion_values<T: Real>(
    xi: &Payoff<T>,
    gammas: &[(T, T)],
    grid: &TimeGrid<T>,
) -> Result<Vec<(T, T, T)>> {
    gammas
        .iter()
        .map(|&(g1, g2)| Ok((g1, g2, lattice_solve(xi, g1, g2, grid)?.y0)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemainderRow {
    pub h: f64,
    pub criterion: f64,
    pub prediction: f64,
    pub remainder: f64,
    /// `r(h)/r(h/2)` when the next scale is exactly `h/2`.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanVarianceReport {
    pub mean: f64,
    pub d1: f64,
    pub d2: f64,
    /// Unit direction `(g₁, g₂)`; the criterion is evaluated at `γ = h·g`.
    pub direction: [f64; 2],
    pub criterion_values: Vec<(f64, f64, f64)>,
    pub remainders: Vec<RemainderRow>,
}

impl MeanVarianceReport {
    pub fn ratios(&self) -> Vec<f64> {
        self.remainders.iter().filter_map(|r| r.ratio).collect()
    }

    pub fn max_abs_remainder(&self) -> f64 {
        self.remainders.iter().fold(0.0, |m, r| m.max(r.remainder.abs()))
    }
}

/// Tabulates `r(h) = ε_{h·g}[ξ] − E[ξ] − h(g₁D₁ + g₂D₂)` over `scales`.
///
/// `direction` is normalized to unit length; `scales` must be positive,
/// strictly decreasing, and keep `h·g` inside `[0,1]²`.
pub fn mean_variance_check<T: Real>(
    xi: &Payoff<T>,
    direction: (T, T),
    scales: &[T],
    grid: &TimeGrid<T>,
) -> Result<MeanVarianceReport> {
    let (g1, g2) = direction;
    let norm = (g1 * g1 + g2 * g2).sqrt();
    if g1 < T::zero() || g2 < T::zero() || !(norm > T::zero()) {
        return Err(Error::Precondition("direction must be a nonzero vector in the first quadrant".into()));
    }
    let (g1, g2) = (g1 / norm, g2 / norm);
    if scales.is_empty() {
        return Err(Error::Precondition("no scales given".into()));
    }
    for (k, &h) in scales.iter().enumerate() {
        if !(h > T::zero()) || h * g1 > T::one() || h * g2 > T::one() {
            return Err(Error::Precondition(format!("scale {h} leaves the unit square")));
        }
        if k > 0 && h >= scales[k - 1] {
            return Err(Error::Precondition("scales must be strictly decreasing".into()));
        }
    }
    let terms = taylor_terms(xi, grid)?;
    let mut rows = Vec::with_capacity(scales.len());
    let mut values = Vec::with_capacity(scales.len());
    for &h in scales {
        let (ga, gb) = (h * g1, h * g2);
        let eps = lattice_solve(xi, ga, gb, grid)?.y0;
        let prediction = terms.mean + ga * terms.d1 + gb * terms.d2;
        values.push((ga.as_f64(), gb.as_f64(), eps.as_f64()));
        rows.push(RemainderRow {
            h: h.as_f64(),
            criterion: eps.as_f64(),
            prediction: prediction.as_f64(),
            remainder: (eps - prediction).as_f64(),
            ratio: None,
        });
    }
    for k in 0..rows.len().saturating_sub(1) {
        let (h, h_next) = (scales[k], scales[k + 1]);
        if h_next * T::lit(2.0) == h && rows[k + 1].remainder != 0.0 {
            rows[k].ratio = Some(rows[k].remainder / rows[k + 1].remainder);
        }
    }
    Ok(MeanVarianceReport {
        mean: terms.mean.as_f64(),
        d1: terms.d1.as_f64(),
        d2: terms.d2.as_f64(),
        direction: [g1.as_f64(), g2.as_f64()],
        criterion_values: values,
        remainders: rows,
    })
}

/// Lattice variance decomposition of a payoff.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceDecomposition {
    /// `D_i`: first-order part plus half of the cross term.
    pub d1: f64,
    pub d2: f64,
    /// `E Σ Z̄_i²Δt`; identical to [`taylor_terms`].
    pub first_order: [f64; 2],
    /// Variance carried by `ΔW₁ΔW₂` increments; vanishes as `Δt → 0`.
    pub cross: f64,
    pub mean: f64,
    /// Variance by direct summation over the terminal distribution.
    pub lattice_variance: f64,
    /// `|D₁ + D₂ − Var|`.
    pub identity_error: f64,
}

pub fn variance_decomposition<T: Real>(
    xi: &Payoff<T>,
    grid: &TimeGrid<T>,
) -> Result<VarianceDecomposition> {
    let opts = LatticeOptions { accumulate_energy: true, ..Default::default() };
    let sol = lattice_solve_with(xi, T::zero(), T::zero(), grid, opts)?;
    let e = sol.energy.expect("energy requested");
    let [d1, d2] = e.decomposition();
    let (_, var) = lattice_moments(xi, grid)?;
    Ok(VarianceDecomposition {
        d1: d1.as_f64(),
        d2: d2.as_f64(),
        first_order: [e.first_order[0].as_f64(), e.first_order[1].as_f64()],
        cross: e.cross.as_f64(),
        mean: sol.y0.as_f64(),
        lattice_variance: var.as_f64(),
        identity_error: (d1 + d2 - var).abs().as_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxiomCheck {
    pub axiom: &'static str,
    pub payoff: String,
    pub detail: String,
    pub error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxiomReport {
    pub tolerance: f64,
    /// Names of the payoffs the checks were run on.
    pub family: Vec<String>,
    pub checks: Vec<AxiomCheck>,
}

impl AxiomReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Checks the decomposition axioms on a finite family of payoffs.
///
/// * A1: `D_i[3ξ + 7] = 9·D_i[ξ]`.
/// * A3/A4: for a payoff of one driver, its own component is the full
///   variance and the other is zero.
/// * A5 (restricted): `D_i[ξ + η] = D_i[ξ] + D_i[η]` when `ξ` and `η` depend on
///   different drivers.
/// * The identity `D₁ + D₂ = Var` on every member.
pub fn check_axioms<T: Real>(
    family: &[Payoff<T>],
    grid: &TimeGrid<T>,
    tolerance: f64,
) -> Result<AxiomReport> {
    let mut checks = Vec::new();
    let mut push = |axiom, payoff: &str, detail: String, error: f64| {
        checks.push(AxiomCheck { axiom, payoff: payoff.to_string(), detail, error, passed: error <= tolerance });
    };
    let decomps: Vec<VarianceDecomposition> =
        family.iter().map(|xi| variance_decomposition(xi, grid)).collect::<Result<_>>()?;

    for (xi, d) in family.iter().zip(&decomps) {
        push(
            "identity",
            xi.name(),
            format!("d1 + d2 = {} vs variance {}", d.d1 + d.d2, d.lattice_variance),
            d.identity_error / d.lattice_variance.max(1.0),
        );
        let scaled = variance_decomposition(&xi.affine(T::lit(3.0), T::lit(7.0)), grid)?;
        let err = rel_err(scaled.d1, 9.0 * d.d1).max(rel_err(scaled.d2, 9.0 * d.d2));
        push("A1", xi.name(), format!("D[3xi+7] = ({}, {})", scaled.d1, scaled.d2), err);
        let own = match xi.drivers() {
            Drivers::First => Some((d.d1, d.d2)),
            Drivers::Second => Some((d.d2, d.d1)),
            _ => None,
        };
        if let Some((own, other)) = own {
            push("A3", xi.name(), format!("own component {own} vs variance {}", d.lattice_variance),
                rel_err(own, d.lattice_variance));
            push("A4", xi.name(), format!("other component {other}"), other.abs());
        }
    }

    for (a, (xi, dx)) in family.iter().zip(&decomps).enumerate() {
        for (eta, de) in family.iter().zip(&decomps).skip(a + 1) {
            let separated = matches!(
                (xi.drivers(), eta.drivers()),
                (Drivers::First, Drivers::Second) | (Drivers::Second, Drivers::First)
            );
            if !separated {
                continue;
            }
            let sum = variance_decomposition(&xi.sum(eta), grid)?;
            let err = rel_err(sum.d1, dx.d1 + de.d1).max(rel_err(sum.d2, dx.d2 + de.d2));
            push("A5", &format!("{} + {}", xi.name(), eta.name()),
                format!("D[xi+eta] = ({}, {})", sum.d1, sum.d2), err);
        }
    }

    Ok(AxiomReport {
        tolerance,
        family: family.iter().map(|x| x.name().to_string()).collect(),
        checks,
    })
}

/// Payoffs used by default for axiom checks.
pub fn standard_axiom_family<T: Real>() -> Vec<Payoff<T>> {
    vec![
        Payoff::product(T::one()),
        Payoff::linear(T::one(), T::one(), T::zero()),
        Payoff::sin_first(),
        Payoff::sin_second(),
        Payoff::quadratic(T::zero(), T::lit(0.5)),
        Payoff::call(T::one(), T::zero(), T::lit(0.25)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> TimeGrid<f64> {
        TimeGrid::new(1.0, n).unwrap()
    }

    #[test]
    fn taylor_terms_of_linear_payoff() {
        let t = taylor_terms(&Payoff::linear(2.0, 1.0, 0.0), &grid(20)).unwrap();
        assert!(t.mean.abs() < 1e-14);
        assert!((t.d1 - 4.0).abs() < 1e-12 && (t.d2 - 1.0).abs() < 1e-12);
        let t = taylor_terms(&Payoff::constant(3.0), &grid(20)).unwrap();
        assert_eq!((t.mean, t.d1, t.d2), (3.0, 0.0, 0.0));
    }

    #[test]
    fn product_payoff_first_order_terms() {
        // pure first-order parts are T²/2·(1 − 1/N); the cross term restores the rest
        let n = 50;
        let t = taylor_terms(&Payoff::product(1.0), &grid(n)).unwrap();
        let expect = 0.5 * (1.0 - 1.0 / n as f64);
        assert!((t.d1 - expect).abs() < 1e-12 && (t.d2 - expect).abs() < 1e-12);
        let d = variance_decomposition(&Payoff::product(1.0), &grid(n)).unwrap();
        assert!((d.d1 - 0.5).abs() < 1e-12 && (d.d2 - 0.5).abs() < 1e-12);
        assert_eq!(d.first_order, [t.d1, t.d2]);
    }

    #[test]
    fn linear_payoff_remainders_vanish() {
        let xi = Payoff::linear(2.0, -1.0, 0.5);
        let r = mean_variance_check(&xi, (1.0, 1.0), &[0.4, 0.2, 0.1], &grid(40)).unwrap();
        assert!(r.max_abs_remainder() < 1e-12, "{r:?}");
    }

    #[test]
    fn chi_square_remainder_ratios() {
        let xi = Payoff::quadratic(1.0, 0.0);
        let r = mean_variance_check(&xi, (1.0, 1.0), &[0.04, 0.02, 0.01], &grid(200)).unwrap();
        assert!((r.direction[0] - 0.5f64.sqrt()).abs() < 1e-15);
        let ratios = r.ratios();
        assert_eq!(ratios.len(), 2);
        assert!(ratios.iter().all(|q| (3.0..=5.0).contains(q)), "{ratios:?}");
        assert!(r.remainders.iter().all(|row| row.remainder > 0.0));
    }

    #[test]
    fn rejects_bad_scales() {
        let xi = Payoff::quadratic(1.0, 0.0);
        assert!(mean_variance_check(&xi, (1.0, 0.0), &[0.1, 0.2], &grid(10)).is_err());
        assert!(mean_variance_check(&xi, (1.0, 0.0), &[2.0], &grid(10)).is_err());
        assert!(mean_variance_check(&xi, (0.0, 0.0), &[0.1], &grid(10)).is_err());
    }

    #[test]
    fn standard_family_satisfies_axioms() {
        let rep = check_axioms(&standard_axiom_family::<f64>(), &grid(60), 1e-10).unwrap();
        assert!(rep.all_passed(), "{:#?}", rep.checks.iter().filter(|c| !c.passed).collect::<Vec<_>>());
        assert!(rep.checks.iter().any(|c| c.axiom == "A5"));
    }
}
