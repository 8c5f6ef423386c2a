//! Property tests over randomized payoffs, models and controls.

use approx::assert_relative_eq;
use asymrisk::criterion::variance_decomposition;
use asymrisk::lattice::{lattice_solve, Payoff};
use asymrisk::linalg::{dmat, dvec};
use asymrisk::riccati::{riccati_bounds_check, solve_riccati_lq};
use asymrisk::sde::{estimate_growth_rate, AffineFeedback};
use asymrisk::smp::{hamiltonian_grad_u, hamiltonian_h};
use asymrisk::{GammaMatrix, LqModel, TimeGrid};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn gamma_pair() -> impl Strategy<Value = (f64, f64)> {
    (0.0..=1.0f64, 0.0..=1.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn constant_payoff_is_preserved((g1, g2) in gamma_pair(), c in -50.0..50.0f64, n in 2usize..40) {
        let grid = TimeGrid::new(1.0, n).unwrap();
        let sol = lattice_solve(&Payoff::constant(c), g1, g2, &grid).unwrap();
        prop_assert_eq!(sol.y0, c);
    }

    #[test]
    fn linear_payoff_has_no_risk_premium(
        (g1, g2) in gamma_pair(),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
        c in -5.0..5.0f64,
        n in 2usize..40,
    ) {
        let grid = TimeGrid::new(1.0, n).unwrap();
        let sol = lattice_solve(&Payoff::linear(a, b, c), g1, g2, &grid).unwrap();
        // y0 = c + (γ₁a² + γ₂b²)T
        let expected = c + g1 * a * a + g2 * b * b;
        prop_assert!((sol.y0 - expected).abs() <= 1e-12 * expected.abs().max(1.0), "{} vs {}", sol.y0, expected);
    }

    #[test]
    fn cash_translation((g1, g2) in gamma_pair(), shift in -10.0..10.0f64, k in 0.1..1.0f64) {
        let grid = TimeGrid::new(1.0, 30).unwrap();
        let xi = Payoff::sin_first().sum(&Payoff::sin_second()).affine(k, 0.0);
        let base = lattice_solve(&xi, g1, g2, &grid).unwrap().y0;
        let moved = lattice_solve(&xi.affine(1.0, shift), g1, g2, &grid).unwrap().y0;
        prop_assert!((moved - base - shift).abs() < 1e-11);
    }

    #[test]
    fn monotone_in_gamma(g in 0.0..0.5f64, dg in 0.0..0.5f64, n in 4usize..40) {
        let grid = TimeGrid::new(1.0, n).unwrap();
        let xi = Payoff::sin_first().sum(&Payoff::sin_second());
        let lo = lattice_solve(&xi, g, g, &grid).unwrap();
        let hi = lattice_solve(&xi, g + dg, g + dg, &grid).unwrap();
        prop_assert!(!hi.stability_warning());
        prop_assert!(hi.y0 >= lo.y0 - 1e-14);
    }

    #[test]
    fn decomposition_sums_to_variance(
        a in -2.0..2.0f64,
        b in -2.0..2.0f64,
        k in -1.0..1.0f64,
        q in 0.0..0.5f64,
        n in 2usize..60,
    ) {
        let grid = TimeGrid::new(1.0, n).unwrap();
        let xi = Payoff::linear(a, b, 0.0)
            .sum(&Payoff::product(k))
            .sum(&Payoff::quadratic(q, 0.0));
        let d = variance_decomposition(&xi, &grid).unwrap();
        prop_assert!(d.identity_error <= 1e-12 * d.lattice_variance.max(1.0), "{:?}", d);
        prop_assert!(d.d1 >= -1e-15 && d.d2 >= -1e-15);
    }

    #[test]
    fn riccati_stays_between_zero_and_comparison(
        a in -0.5..0.5f64,
        b in 0.2..2.0f64,
        s in 0.1..1.5f64,
        m in 0.0..2.0f64,
        h in 0.0..2.0f64,
        n_cost in 0.3..3.0f64,
        g in 0.01..1.0f64,
    ) {
        // the well-posedness condition needs BN⁻¹Bᵀ ≥ 2ΣΓΣᵀ
        prop_assume!(b * b / n_cost >= 2.0 * s * s * g);
        let model = LqModel::constant(
            TimeGrid::new(1.0, 200).unwrap(),
            dmat(1, 1, &[a]),
            dmat(1, 1, &[b]),
            dmat(1, 1, &[s]),
            dmat(1, 1, &[m]),
            dmat(1, 1, &[n_cost]),
            dmat(1, 1, &[h]),
            GammaMatrix::scalar(1, g).unwrap(),
            dvec(&[1.0]),
        );
        let ric = solve_riccati_lq(&model).unwrap();
        let report = riccati_bounds_check(&model, &ric).unwrap();
        prop_assert!(report.applicable);
        prop_assert!(report.holds(), "{:?}", report);
    }

    #[test]
    fn hamiltonian_is_convex_quadratic_in_control(
        x in -3.0..3.0f64,
        p in -3.0..3.0f64,
        u in -5.0..5.0f64,
        du in -5.0..5.0f64,
        n_cost in 0.1..4.0f64,
        b in -2.0..2.0f64,
    ) {
        let model = LqModel::constant(
            TimeGrid::new(1.0, 10).unwrap(),
            dmat(1, 1, &[0.3]),
            dmat(1, 1, &[b]),
            dmat(1, 1, &[0.7]),
            dmat(1, 1, &[1.0]),
            dmat(1, 1, &[n_cost]),
            dmat(1, 1, &[1.0]),
            GammaMatrix::scalar(1, 0.2).unwrap(),
            dvec(&[1.0]),
        );
        let (xv, pv, z, q) = (dvec(&[x]), dvec(&[p]), dvec(&[0.4]), dmat(1, 1, &[0.1]));
        let h = |uu: f64| hamiltonian_h(&model, 2, &xv, &z, &dvec(&[uu]), &pv, &q);
        let grad = hamiltonian_grad_u(&model, 2, &dvec(&[u]), &pv)[0];
        // exact second-order expansion
        let expansion = h(u) + grad * du + 0.5 * n_cost * du * du;
        assert_relative_eq!(h(u + du), expansion, epsilon = 1e-10, max_relative = 1e-12);
        let eps = 1e-5;
        let fd = (h(u + eps) - h(u - eps)) / (2.0 * eps);
        prop_assert!((fd - grad).abs() < 1e-6 * grad.abs().max(1.0));
    }

    #[test]
    fn scaled_strategy_is_linear(k in -3.0..3.0f64, x in -2.0..2.0f64, step in 0usize..10) {
        let base = AffineFeedback {
            name: "base".into(),
            slopes: (0..=10).map(|i| DMatrix::from_element(2, 1, 0.1 * i as f64)).collect(),
            intercepts: (0..=10).map(|i| DVector::from_element(2, 1.0 - 0.05 * i as f64)).collect(),
        };
        let scaled = base.scaled(k, "scaled");
        let xv = dvec(&[x]);
        let diff = scaled.eval(step, &xv) - base.eval(step, &xv) * k;
        prop_assert!(diff.amax() < 1e-14);
    }

    #[test]
    fn growth_estimate_is_translation_covariant(
        xs in prop::collection::vec(-1.0..1.0f64, 2..200),
        c in -5.0..5.0f64,
        theta in 0.1..2.0f64,
    ) {
        let base = estimate_growth_rate(&xs, theta).unwrap();
        let moved: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let shifted = estimate_growth_rate(&moved, theta).unwrap();
        prop_assert!((shifted.estimate - base.estimate - c).abs() < 1e-12);
        prop_assert!((shifted.stderr - base.stderr).abs() < 1e-12);
    }
}
