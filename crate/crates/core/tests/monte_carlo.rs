//! Monte Carlo engines against distributions known in closed form.

use asymrisk::linalg::{dmat, dvec};
use asymrisk::portfolio::{compare_strategies, StrategyKind};
use asymrisk::sde::{
    estimate_growth_rate, estimate_symmetric_value, simulate_factor_and_wealth, simulate_lq_closed_loop,
    simulate_lq_with_gain, AffineFeedback, SimulationOptions,
};
use asymrisk::{riccati, FactorMarketModel, GammaMatrix, LqModel, MatrixPath, ScalarPath, TimeGrid};

fn uncontrolled(a: f64, sigma: f64, h: f64, gamma: f64, steps: usize) -> LqModel<f64> {
    LqModel::constant(
        TimeGrid::new(1.0, steps).unwrap(),
        dmat(1, 1, &[a]),
        dmat(1, 1, &[0.0]),
        dmat(1, 1, &[sigma]),
        dmat(1, 1, &[0.0]),
        dmat(1, 1, &[1.0]),
        dmat(1, 1, &[h]),
        GammaMatrix::scalar(1, gamma).unwrap(),
        dvec(&[1.0]),
    )
}

fn sample_mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[test]
fn uncontrolled_state_mean_grows_exponentially() {
    let model = uncontrolled(0.1, 0.2, 1.0, 0.1, 1000);
    let ric = riccati::solve_riccati_lq(&model).unwrap();
    let bundle = simulate_lq_closed_loop(&model, &ric, SimulationOptions::new(20_000, 11)).unwrap();
    let xs: Vec<f64> = (0..bundle.n_paths).map(|p| bundle.terminal_state(p)[0]).collect();
    let (mean, sd) = sample_mean_sd(&xs);
    let se = sd / (xs.len() as f64).sqrt();
    let exact = 0.1f64.exp();
    assert!((mean - exact).abs() < 4.0 * se, "mean {mean} vs {exact} (se {se})");
    // Var X(1) = σ²(e^{2a} − 1)/(2a)
    let exact_sd = (0.04 * (0.2f64.exp() - 1.0) / 0.2).sqrt();
    assert!((sd - exact_sd).abs() < 0.03 * exact_sd, "sd {sd} vs {exact_sd}");
}

#[test]
fn exponential_moment_of_gaussian_square() {
    // With A = B = M = 0, Σ = 1, H = 1 the cost is ½W(1)² and
    // (1/θ) log E exp(θW²/2) = −log(1 − θ)/(2θ).
    let theta = 0.2;
    let model = uncontrolled(0.0, 1.0, 1.0, theta / 2.0, 500);
    let gain = MatrixPath::constant(model.grid, dmat(1, 1, &[0.0]));
    let mut m0 = model.clone();
    m0.x0 = dvec(&[0.0]);
    let bundle = simulate_lq_with_gain(&m0, &gain, SimulationOptions::new(50_000, 5)).unwrap();
    let est = estimate_symmetric_value(&m0, &bundle, theta).unwrap();
    let exact = -(1.0 - theta).ln() / (2.0 * theta);
    assert!(!est.heavy_tail);
    assert!(est.z_score(exact).abs() < 4.0, "{est:?} vs {exact}");
    // the Riccati value formula agrees with the same closed form
    let ric = riccati::solve_riccati_lq(&m0).unwrap();
    let trace: f64 = asymrisk::lq::trace_tail(&m0, &ric).first() * 0.5;
    assert!((trace - exact).abs() < 1e-10);
}

fn flat_market(theta: f64, steps: usize) -> FactorMarketModel<f64> {
    let grid = TimeGrid::new(1.0, steps).unwrap();
    FactorMarketModel {
        a: dvec(&[0.06]),
        b: dvec(&[0.0]),
        loading: dmat(1, 1, &[0.0]),
        mean_reversion: dmat(1, 1, &[0.0]),
        lambda: dmat(1, 2, &[0.0, 0.1]),
        sigma: dmat(1, 2, &[0.2, 0.0]),
        rate: ScalarPath::constant(grid, 0.02),
        gamma: GammaMatrix::scalar(2, theta / 4.0).unwrap(),
        x0: dvec(&[0.0]),
        grid,
    }
}

#[test]
fn constant_mix_log_wealth_is_gaussian() {
    // log V(1) ~ N(r + u(a−r) − ½u²σ², u²σ²), so I(u) = mean − (θ/4)·variance.
    let theta = 0.4;
    let model = flat_market(theta, 200);
    let u = 0.7;
    let strat = AffineFeedback::constant("const", &model.grid, 1, dvec(&[u]));
    let bundle = simulate_factor_and_wealth(&model, &strat, SimulationOptions::new(40_000, 2)).unwrap();
    let logs = bundle.valid_log_wealth();
    let (mean, sd) = sample_mean_sd(&logs);
    let exact_mean = 0.02 + u * 0.04 - 0.5 * u * u * 0.04;
    let exact_var = u * u * 0.04;
    assert!((mean - exact_mean).abs() < 4.0 * sd / (logs.len() as f64).sqrt());
    assert!((sd * sd - exact_var).abs() < 0.03 * exact_var);
    let est = estimate_growth_rate(&logs, theta).unwrap();
    let exact = exact_mean - theta / 4.0 * exact_var;
    assert!(est.z_score(exact).abs() < 4.0, "{est:?} vs {exact}");
}

#[test]
fn optimal_constant_mix_beats_neighbours() {
    let theta = 0.4;
    let model = flat_market(theta, 100);
    let kinds = [
        StrategyKind::Optimal,
        StrategyKind::Zero,
        StrategyKind::Scaled { factor: 0.5 },
        StrategyKind::Scaled { factor: 1.5 },
    ];
    let cmp = compare_strategies(&model, &kinds, SimulationOptions::new(20_000, 9), theta).unwrap();
    assert!(cmp.optimal_within_top, "{cmp:?}");
    assert!(!cmp.inconclusive);
    // ū = (a − r)/((1 + θ/2)σ²)
    let u = 0.04 / (1.2 * 0.04);
    let exact = 0.02 + u * 0.04 - 0.5 * u * u * 0.04 - theta / 4.0 * u * u * 0.04;
    assert!((cmp.formula_growth - exact).abs() < 1e-12);
    assert!(cmp.rows[0].estimate.z_score(exact).abs() < 4.0);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let model = uncontrolled(0.1, 0.5, 1.0, 0.1, 200);
    let ric = riccati::solve_riccati_lq(&model).unwrap();
    let opts = SimulationOptions::new(3000, 77).recording(3);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| simulate_lq_closed_loop(&model, &ric, opts).unwrap())
    };
    let (one, many) = (run(1), run(6));
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&one.terminal_states), bits(&many.terminal_states));
    assert_eq!(bits(&one.cost_integral), bits(&many.cost_integral));
    assert_eq!(one.recorded, many.recorded);

    let market = flat_market(0.4, 100);
    let strat = AffineFeedback::constant("c", &market.grid, 1, dvec(&[0.5]));
    let wealth = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| simulate_factor_and_wealth(&market, &strat, SimulationOptions::new(2000, 3)).unwrap())
    };
    assert_eq!(bits(&wealth(1).log_wealth), bits(&wealth(5).log_wealth));
}

#[test]
fn different_seeds_give_different_samples() {
    let model = uncontrolled(0.0, 1.0, 1.0, 0.1, 50);
    let ric = riccati::solve_riccati_lq(&model).unwrap();
    let a = simulate_lq_closed_loop(&model, &ric, SimulationOptions::new(10, 1)).unwrap();
    let b = simulate_lq_closed_loop(&model, &ric, SimulationOptions::new(10, 2)).unwrap();
    assert_ne!(a.terminal_states, b.terminal_states);
    // path p only depends on its own stream
    let c = simulate_lq_closed_loop(&model, &ric, SimulationOptions::new(20, 1)).unwrap();
    assert_eq!(a.terminal_states[..], c.terminal_states[..10]);
}
