//! Seeded Monte Carlo simulation of the closed-loop LQ state, the factor
//! process and the log-wealth process, plus exponential-moment estimators.
//!
//! Path `p` draws its Brownian increments from stream `p` of the run's
//! [`RandomSource`]; paths are simulated in parallel and collected in index
//! order, so every output is independent of the worker count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{matvec_into, quad_form};
use crate::model::{FactorMarketModel, LqModel};
use crate::path::MatrixPath;
use crate::random::RandomSource;
use crate::scalar::Real;

/// Share of the top 0.1% of exponential weights above which a sample is flagged heavy-tailed.
pub const HEAVY_TAIL_SHARE: f64 = 0.2;
/// Controls above this norm are flagged as numerically unbounded.
pub const CONTROL_BOUND: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SimulationOptions {
    pub n_paths: usize,
    pub seed: u64,
    /// Number of leading paths whose full trajectories are kept.
    pub record: usize,
}

impl SimulationOptions {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self { n_paths, seed, record: 0 }
    }

    pub fn recording(mut self, record: usize) -> Self {
        self.record = record;
        self
    }

    fn check(&self) -> Result<()> {
        if self.n_paths == 0 {
            Err(Error::Precondition("n_paths must be positive".into()))
        } else {
            Ok(())
        }
    }
}

/// Full state and control trajectory of one simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedPath<T: Real> {
    pub index: usize,
    pub states: Vec<DVector<T>>,
    pub controls: Vec<DVector<T>>,
}

/// Closed-loop LQ simulation output.
///
/// Per-path cost accumulators and terminal states are kept for every path;
/// whole trajectories only for the first `record` paths.
#[derive(Debug, Clone)]
pub struct PathBundle<T: Real> {
    pub grid: TimeGrid<T>,
    pub n_paths: usize,
    pub source: RandomSource,
    pub state_dim: usize,
    pub control_dim: usize,
    /// `X(T)` for every path, row-major `n_paths × state_dim`.
    pub terminal_states: Vec<T>,
    /// `½∫(XᵀMX + uᵀNu)dt` by the trapezoid rule.
    pub cost_integral: Vec<T>,
    /// `½X(T)ᵀHX(T)`.
    pub terminal_cost: Vec<T>,
    pub recorded: Vec<RecordedPath<T>>,
}

impl<T: Real> PathBundle<T> {
    pub fn terminal_state(&self, path: usize) -> &[T] {
        &self.terminal_states[path * self.state_dim..(path + 1) * self.state_dim]
    }

    pub fn total_costs(&self) -> Vec<T> {
        self.cost_integral.iter().zip(&self.terminal_cost).map(|(a, b)| *a + *b).collect()
    }
}

struct LqStep<T: Real> {
    closed: DMatrix<T>,
    gain: DMatrix<T>,
    sigma: DMatrix<T>,
    m: DMatrix<T>,
    n: DMatrix<T>,
}

struct LqOutcome<T: Real> {
    terminal: Vec<T>,
    cost: T,
    terminal_cost: T,
    recorded: Option<RecordedPath<T>>,
}

/// Euler–Maruyama for `dX = (A + BK)X dt + Σ dW` under the feedback `u = K(t)X`.
pub fn simulate_lq_with_gain<T: Real>(
    model: &LqModel<T>,
    gain: &MatrixPath<T>,
    opts: SimulationOptions,
) -> Result<PathBundle<T>> {
    opts.check()?;
    model.validate().into_result()?;
    let grid = model.grid;
    let (n, k, d) = (model.state_dim(), model.control_dim(), model.noise_dim());
    if gain.grid().steps() != grid.steps() || gain.first().shape() != (k, n) {
        return Err(Error::Dimension {
            what: "feedback gain",
            expected: format!("{k}x{n} on {} steps", grid.steps()),
            found: format!("{:?} on {} steps", gain.first().shape(), gain.grid().steps()),
        });
    }
    let steps: Vec<LqStep<T>> = (0..grid.len())
        .map(|i| LqStep {
            closed: model.a.at(i) + model.b.at(i) * gain.at(i),
            gain: gain.at(i).clone(),
            sigma: model.sigma.at(i).clone(),
            m: model.m.at(i).clone(),
            n: model.n.at(i).clone(),
        })
        .collect();
    let dt = grid.dt();
    let sqdt = dt.sqrt();
    let half = T::lit(0.5);
    let source = RandomSource::new(opts.seed, 0);
    let x0: Vec<T> = model.x0.iter().copied().collect();

    let outcomes: Vec<LqOutcome<T>> = (0..opts.n_paths)
        .into_par_iter()
        .map_init(
            || (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); k], vec![T::zero(); d]),
            |(x, drift, u, dw), p| {
                let mut normals = source.substream(p as u64).normals();
                x.copy_from_slice(&x0);
                let record = p < opts.record;
                let mut states = Vec::new();
                let mut controls = Vec::new();
                let running = |x: &[T], u: &[T], s: &LqStep<T>| quad_form(&s.m, x) + quad_form(&s.n, u);
                matvec_into(&steps[0].gain, x, u);
                let mut f_prev = running(x, u, &steps[0]);
                let mut cost = T::zero();
                for i in 0..grid.steps() {
                    let s = &steps[i];
                    if record {
                        states.push(DVector::from_column_slice(x));
                        controls.push(DVector::from_column_slice(u));
                    }
                    matvec_into(&s.closed, x, drift);
                    for w in dw.iter_mut() {
                        *w = normals.next::<T>() * sqdt;
                    }
                    for r in 0..n {
                        let mut noise = T::zero();
                        for c in 0..d {
                            noise += s.sigma[(r, c)] * dw[c];
                        }
                        x[r] += drift[r] * dt + noise;
                    }
                    let next = &steps[i + 1];
                    matvec_into(&next.gain, x, u);
                    let f_next = running(x, u, next);
                    cost += (f_prev + f_next) * half * dt;
                    f_prev = f_next;
                }
                if record {
                    states.push(DVector::from_column_slice(x));
                    controls.push(DVector::from_column_slice(u));
                }
                LqOutcome {
                    terminal: x.clone(),
                    cost: cost * half,
                    terminal_cost: quad_form(&model.h, x) * half,
                    recorded: record.then_some(RecordedPath { index: p, states, controls }),
                }
            },
        )
        .collect();

    let mut bundle = PathBundle {
        grid,
        n_paths: opts.n_paths,
        source,
        state_dim: n,
        control_dim: k,
        terminal_states: Vec::with_capacity(opts.n_paths * n),
        cost_integral: Vec::with_capacity(opts.n_paths),
        terminal_cost: Vec::with_capacity(opts.n_paths),
        recorded: Vec::new(),
    };
    for o in outcomes {
        bundle.terminal_states.extend_from_slice(&o.terminal);
        bundle.cost_integral.push(o.cost);
        bundle.terminal_cost.push(o.terminal_cost);
        if let Some(r) = o.recorded {
            bundle.recorded.push(r);
        }
    }
    Ok(bundle)
}

/// Closed loop under the optimal feedback `ū = −N⁻¹BᵀPX`.
pub fn simulate_lq_closed_loop<T: Real>(
    model: &LqModel<T>,
    riccati: &crate::riccati::RiccatiSolution<T>,
    opts: SimulationOptions,
) -> Result<PathBundle<T>> {
    let gain = crate::lq::feedback_gain(model, riccati)?;
    simulate_lq_with_gain(model, &gain, opts)
}

/// Plug-in estimate of an exponential moment functional with diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n_used: usize,
    pub excluded: usize,
    /// Fraction of the total weight carried by the top 0.1% of samples.
    pub top_weight_share: f64,
    pub heavy_tail: bool,
}

impl MomentEstimate {
    pub fn z_score(&self, reference: f64) -> f64 {
        let diff = self.estimate - reference;
        if self.stderr > 0.0 {
            diff / self.stderr
        } else if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    }
}

/// Returns `(log mean exp(x), sd(w)/(w̄√n), top share)` with `w = exp(x − max x)`.
fn log_mean_exp(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len();
    let shift = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = xs.iter().map(|x| (x - shift).exp()).collect();
    let sum: f64 = w.iter().sum();
    let mean = sum / n as f64;
    let rel_se = if n > 1 {
        let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        var.sqrt() / (mean * (n as f64).sqrt())
    } else {
        0.0
    };
    let top = n.div_ceil(1000);
    let mut sorted = w;
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let share = sorted[..top].iter().sum::<f64>() / sum;
    (shift + mean.ln(), rel_se, share)
}

fn moment_estimate(exponents: Vec<f64>, excluded: usize, scale: f64) -> Result<MomentEstimate> {
    if exponents.is_empty() {
        return Err(Error::EmptySample { excluded });
    }
    let n = exponents.len();
    let (lme, rel_se, share) = log_mean_exp(&exponents);
    // a single sample carries all the weight but says nothing about the tail
    let heavy_tail = n > 1 && share > HEAVY_TAIL_SHARE;
    Ok(MomentEstimate {
        estimate: scale * lme,
        stderr: scale.abs() * rel_se,
        n_used: n,
        excluded,
        top_weight_share: share,
        heavy_tail,
    })
}

/// `(1/θ) log mean exp{θ·cost}` over the bundle's total costs.
///
/// Requires `Γ = (θ/2)I` within `1e-12`.
pub fn estimate_symmetric_value<T: Real>(
    model: &LqModel<T>,
    bundle: &PathBundle<T>,
    theta: T,
) -> Result<MomentEstimate> {
    if !(theta > T::zero()) {
        return Err(Error::Precondition(format!("theta must be positive, got {theta}")));
    }
    let target = theta * T::lit(0.5);
    match model.gamma.scalar_value(T::lit(1e-12)) {
        Some(g) if (g - target).abs() <= T::lit(1e-12) => {}
        _ => {
            return Err(Error::Precondition(format!(
                "symmetric evaluation needs Gamma = (theta/2) I = {target} I"
            )))
        }
    }
    let th = theta.as_f64();
    let mut excluded = 0;
    let xs: Vec<f64> = bundle
        .total_costs()
        .into_iter()
        .filter_map(|c| {
            let c = c.as_f64();
            if c.is_finite() {
                Some(th * c)
            } else {
                excluded += 1;
                None
            }
        })
        .collect();
    moment_estimate(xs, excluded, 1.0 / th)
}

/// `I = −(2/θ) log mean exp{−(θ/2)·log V(T)}`.
pub fn estimate_growth_rate(log_wealth: &[f64], theta: f64) -> Result<MomentEstimate> {
    if !(theta > 0.0) {
        return Err(Error::Precondition(format!("theta must be positive, got {theta}")));
    }
    let mut excluded = 0;
    let xs: Vec<f64> = log_wealth
        .iter()
        .filter_map(|&l| {
            if l.is_finite() {
                Some(-0.5 * theta * l)
            } else {
                excluded += 1;
                None
            }
        })
        .collect();
    moment_estimate(xs, excluded, -2.0 / theta)
}

/// Portfolio weights as a function of grid step and factor state.
pub trait FeedbackStrategy<T: Real>: Send + Sync {
    fn name(&self) -> &str;
    /// Writes `u(t_i, x)` into `out` (length m).
    fn control_into(&self, step: usize, x: &[T], out: &mut [T]);
}

/// `u(t_i, x) = S_i x + c_i`.
#[derive(Debug, Clone)]
pub struct AffineFeedback<T: Real> {
    pub name: String,
    pub slopes: Vec<DMatrix<T>>,
    pub intercepts: Vec<DVector<T>>,
}

impl<T: Real> AffineFeedback<T> {
    pub fn constant(name: impl Into<String>, grid: &TimeGrid<T>, factors: usize, weights: DVector<T>) -> Self {
        let m = weights.len();
        Self {
            name: name.into(),
            slopes: vec![DMatrix::zeros(m, factors); grid.len()],
            intercepts: vec![weights; grid.len()],
        }
    }

    pub fn zero(grid: &TimeGrid<T>, assets: usize, factors: usize) -> Self {
        Self::constant("zero", grid, factors, DVector::zeros(assets))
    }

    pub fn scaled(&self, factor: T, name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            slopes: self.slopes.iter().map(|s| s * factor).collect(),
            intercepts: self.intercepts.iter().map(|c| c * factor).collect(),
        }
    }

    pub fn eval(&self, step: usize, x: &DVector<T>) -> DVector<T> {
        &self.slopes[step] * x + &self.intercepts[step]
    }
}

impl<T: Real> FeedbackStrategy<T> for AffineFeedback<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn control_into(&self, step: usize, x: &[T], out: &mut [T]) {
        matvec_into(&self.slopes[step], x, out);
        for (o, c) in out.iter_mut().zip(self.intercepts[step].iter()) {
            *o += *c;
        }
    }
}

/// Factor-and-wealth simulation output.
#[derive(Debug, Clone)]
pub struct WealthBundle<T: Real> {
    pub grid: TimeGrid<T>,
    pub n_paths: usize,
    pub source: RandomSource,
    pub strategy: String,
    /// `log V(T)` with `V(0) = 1`; NaN for excluded paths.
    pub log_wealth: Vec<T>,
    /// Indices of paths that produced non-finite values.
    pub excluded: Vec<usize>,
    pub max_control_norm: T,
    /// Some control exceeded [`CONTROL_BOUND`].
    pub control_bound_exceeded: bool,
    /// Factor states and controls of the first recorded paths.
    pub recorded: Vec<RecordedPath<T>>,
}

impl<T: Real> WealthBundle<T> {
    pub fn valid_log_wealth(&self) -> Vec<f64> {
        self.log_wealth.iter().map(|v| v.as_f64()).filter(|v| v.is_finite()).collect()
    }
}

/// Euler–Maruyama for the factor `dX = (b + BX)dt + ΛdW`, and the exact
/// log-coordinate update
/// `d log V = [r + uᵀ(a + AX − r𝟏) − ½uᵀΣΣᵀu]dt + uᵀΣdW` with left-point controls.
pub fn simulate_factor_and_wealth<T: Real>(
    model: &FactorMarketModel<T>,
    strategy: &dyn FeedbackStrategy<T>,
    opts: SimulationOptions,
) -> Result<WealthBundle<T>> {
    opts.check()?;
    model.validate().into_result()?;
    let grid = model.grid;
    let (m, n, d) = (model.assets(), model.factors(), model.noise_dim());
    let dt = grid.dt();
    let sqdt = dt.sqrt();
    let half = T::lit(0.5);
    let ss_t = &model.sigma * model.sigma.transpose();
    let source = RandomSource::new(opts.seed, 0);
    let x0: Vec<T> = model.x0.iter().copied().collect();
    let bound = T::lit(CONTROL_BOUND);

    struct Outcome<T: Real> {
        log_v: T,
        max_u: T,
        recorded: Option<RecordedPath<T>>,
    }

    let outcomes: Vec<Outcome<T>> = (0..opts.n_paths)
        .into_par_iter()
        .map_init(
            || (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); m], vec![T::zero(); m], vec![T::zero(); d]),
            |(x, tmp, u, ret, dw), p| {
                let mut normals = source.substream(p as u64).normals();
                x.copy_from_slice(&x0);
                let record = p < opts.record;
                let mut states = Vec::new();
                let mut controls = Vec::new();
                let mut log_v = T::zero();
                let mut max_u = T::zero();
                for i in 0..grid.steps() {
                    let r = *model.rate.at(i);
                    strategy.control_into(i, x, u);
                    let unorm = u.iter().fold(T::zero(), |s, v| s + *v * *v).sqrt();
                    max_u = max_u.max(unorm);
                    if record {
                        states.push(DVector::from_column_slice(x));
                        controls.push(DVector::from_column_slice(u));
                    }
                    for w in dw.iter_mut() {
                        *w = normals.next::<T>() * sqdt;
                    }
                    // excess return a + AX − r𝟏
                    matvec_into(&model.loading, x, ret);
                    let mut drift = r;
                    for a in 0..m {
                        drift += u[a] * (ret[a] + model.a[a] - r);
                    }
                    drift -= quad_form(&ss_t, u) * half;
                    let mut noise = T::zero();
                    for a in 0..m {
                        let mut s = T::zero();
                        for c in 0..d {
                            s += model.sigma[(a, c)] * dw[c];
                        }
                        noise += u[a] * s;
                    }
                    log_v += drift * dt + noise;
                    matvec_into(&model.mean_reversion, x, tmp);
                    for f in 0..n {
                        let mut s = T::zero();
                        for c in 0..d {
                            s += model.lambda[(f, c)] * dw[c];
                        }
                        x[f] += (model.b[f] + tmp[f]) * dt + s;
                    }
                }
                if record {
                    strategy.control_into(grid.steps(), x, u);
                    states.push(DVector::from_column_slice(x));
                    controls.push(DVector::from_column_slice(u));
                }
                Outcome { log_v, max_u, recorded: record.then_some(RecordedPath { index: p, states, controls }) }
            },
        )
        .collect();

    let mut bundle = WealthBundle {
        grid,
        n_paths: opts.n_paths,
        source,
        strategy: strategy.name().to_string(),
        log_wealth: Vec::with_capacity(opts.n_paths),
        excluded: Vec::new(),
        max_control_norm: T::zero(),
        control_bound_exceeded: false,
        recorded: Vec::new(),
    };
    for (p, o) in outcomes.into_iter().enumerate() {
        if o.log_v.finite() {
            bundle.log_wealth.push(o.log_v);
        } else {
            bundle.log_wealth.push(T::lit(f64::NAN));
            bundle.excluded.push(p);
        }
        if o.max_u.finite() {
            bundle.max_control_norm = bundle.max_control_norm.max(o.max_u);
        }
        bundle.control_bound_exceeded |= !o.max_u.finite() || o.max_u > bound;
        if let Some(r) = o.recorded {
            bundle.recorded.push(r);
        }
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples_give_exact_estimates() {
        let e = estimate_growth_rate(&[0.03; 50], 0.4).unwrap();
        assert!((e.estimate - 0.03).abs() < 1e-15);
        assert_eq!(e.stderr, 0.0);
        let e = estimate_growth_rate(&[0.0; 10], 0.4).unwrap();
        assert_eq!((e.estimate, e.stderr), (0.0, 0.0));
    }

    #[test]
    fn growth_estimator_excludes_nan() {
        let e = estimate_growth_rate(&[0.1, f64::NAN, 0.1], 1.0).unwrap();
        assert_eq!((e.n_used, e.excluded), (2, 1));
        assert!(matches!(estimate_growth_rate(&[f64::NAN], 1.0), Err(Error::EmptySample { excluded: 1 })));
        assert!(estimate_growth_rate(&[0.1], 0.0).is_err());
    }

    #[test]
    fn heavy_tail_flag() {
        let mut xs = vec![0.0; 2000];
        xs[0] = 100.0;
        let e = estimate_growth_rate(&xs, 1.0).unwrap();
        // one sample with a tiny weight is harmless for the growth functional
        assert!(!e.heavy_tail);
        xs[0] = -100.0;
        let e = estimate_growth_rate(&xs, 1.0).unwrap();
        assert!(e.heavy_tail && e.top_weight_share > 0.99);
    }

    #[test]
    fn z_score_edge_cases() {
        let e = MomentEstimate {
            estimate: 1.0,
            stderr: 0.0,
            n_used: 1,
            excluded: 0,
            top_weight_share: 1.0,
            heavy_tail: false,
        };
        assert_eq!(e.z_score(1.0), 0.0);
        assert!(e.z_score(0.0).is_infinite());
    }
}
