//! Backward solver for the two-driver quadratic BSDE
//! `dY = −[γ₁Z₁² + γ₂Z₂²]dt + Z₁dW₁ + Z₂dW₂`, `Y(T) = ξ(W₁(T), W₂(T))`,
//! on a recombining product lattice.
//!
//! Each Brownian motion is replaced by a ±√Δt Rademacher walk, so a node at
//! step `k` is a pair `(i, j)` of up-move counts with `W₁ = (2i − k)√Δt`.
//! Conditional expectations over the four children are exact.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::scalar::Real;

/// Largest admissible `|Y|` on the lattice.
pub const OVERFLOW_LIMIT: f64 = 1e12;
/// Explicit-scheme stability limit for `γ·|Z|²·Δt`.
pub const STABILITY_LIMIT: f64 = 0.5;

/// Growth class of a terminal payoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GrowthTag {
    Bounded,
    Linear,
    /// `|ξ| ≤ C + coefficient·(w₁² + w₂²)`.
    Quadratic { coefficient: f64 },
}

/// Which Brownian drivers a payoff depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Drivers {
    None,
    First,
    Second,
    Both,
}

impl Drivers {
    fn join(self, other: Drivers) -> Drivers {
        use Drivers::*;
        match (self, other) {
            (None, d) | (d, None) => d,
            (First, First) => First,
            (Second, Second) => Second,
            _ => Both,
        }
    }
}

type PayoffFn<T> = Arc<dyn Fn(T, T) -> T + Send + Sync>;

/// Markovian terminal condition `ξ = φ(W₁(T), W₂(T))`.
#[derive(Clone)]
pub struct Payoff<T: Real> {
    name: String,
    payoff: PayoffFn<T>,
    growth: GrowthTag,
    drivers: Drivers,
}

impl<T: Real> fmt::Debug for Payoff<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Payoff")
            .field("name", &self.name)
            .field("growth", &self.growth)
            .field("drivers", &self.drivers)
            .finish()
    }
}

impl<T: Real> Payoff<T> {
    pub fn from_fn(
        name: impl Into<String>,
        growth: GrowthTag,
        drivers: Drivers,
        f: impl Fn(T, T) -> T + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), payoff: Arc::new(f), growth, drivers }
    }

    /// `ξ ≡ c`.
    pub fn constant(c: T) -> Self {
        Self::from_fn(format!("constant({c})"), GrowthTag::Bounded, Drivers::None, move |_, _| c)
    }

    /// `ξ = a·W₁ + b·W₂ + c`.
    pub fn linear(a: T, b: T, c: T) -> Self {
        let drivers = match (a == T::zero(), b == T::zero()) {
            (true, true) => Drivers::None,
            (false, true) => Drivers::First,
            (true, false) => Drivers::Second,
            (false, false) => Drivers::Both,
        };
        Self::from_fn(format!("linear({a},{b},{c})"), GrowthTag::Linear, drivers, move |w1, w2| {
            a * w1 + b * w2 + c
        })
    }

    /// `ξ = q₁·W₁² + q₂·W₂²`.
    pub fn quadratic(q1: T, q2: T) -> Self {
        let drivers = match (q1 == T::zero(), q2 == T::zero()) {
            (true, true) => Drivers::None,
            (false, true) => Drivers::First,
            (true, false) => Drivers::Second,
            (false, false) => Drivers::Both,
        };
        let coefficient = q1.abs().max(q2.abs()).as_f64();
        Self::from_fn(
            format!("quadratic({q1},{q2})"),
            GrowthTag::Quadratic { coefficient },
            drivers,
            move |w1, w2| q1 * w1 * w1 + q2 * w2 * w2,
        )
    }

    /// `ξ = k·W₁·W₂`.
    pub fn product(k: T) -> Self {
        let coefficient = (k.abs() * T::lit(0.5)).as_f64();
        Self::from_fn(
            format!("product({k})"),
            GrowthTag::Quadratic { coefficient },
            Drivers::Both,
            move |w1, w2| k * w1 * w2,
        )
    }

    /// `ξ = max(w₁·W₁ + w₂·W₂ − K, 0)`.
    pub fn call(w1: T, w2: T, strike: T) -> Self {
        let drivers = Self::linear(w1, w2, T::zero()).drivers;
        Self::from_fn(format!("call({w1},{w2},{strike})"), GrowthTag::Linear, drivers, move |x, y| {
            (w1 * x + w2 * y - strike).max(T::zero())
        })
    }

    /// `ξ = sin(W₁)`.
    pub fn sin_first() -> Self {
        Self::from_fn("sin(W1)", GrowthTag::Bounded, Drivers::First, |w1, _| w1.sin())
    }

    /// `ξ = sin(W₂)`.
    pub fn sin_second() -> Self {
        Self::from_fn("sin(W2)", GrowthTag::Bounded, Drivers::Second, |_, w2| w2.sin())
    }

    /// `a·ξ + c`.
    pub fn affine(&self, a: T, c: T) -> Self {
        let inner = self.payoff.clone();
        let growth = match self.growth {
            GrowthTag::Quadratic { coefficient } => {
                GrowthTag::Quadratic { coefficient: coefficient * a.abs().as_f64() }
            }
            g => g,
        };
        let drivers = if a == T::zero() { Drivers::None } else { self.drivers };
        Self::from_fn(format!("{a}*{}+{c}", self.name), growth, drivers, move |w1, w2| {
            a * inner(w1, w2) + c
        })
    }

    /// `ξ + η`.
    pub fn sum(&self, other: &Self) -> Self {
        let (f, g) = (self.payoff.clone(), other.payoff.clone());
        let growth = match (self.growth, other.growth) {
            (GrowthTag::Quadratic { coefficient: a }, GrowthTag::Quadratic { coefficient: b }) => {
                GrowthTag::Quadratic { coefficient: a + b }
            }
            (q @ GrowthTag::Quadratic { .. }, _) | (_, q @ GrowthTag::Quadratic { .. }) => q,
            (GrowthTag::Linear, _) | (_, GrowthTag::Linear) => GrowthTag::Linear,
            _ => GrowthTag::Bounded,
        };
        Self::from_fn(
            format!("{}+{}", self.name, other.name),
            growth,
            self.drivers.join(other.drivers),
            move |w1, w2| f(w1, w2) + g(w1, w2),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn growth(&self) -> GrowthTag {
        self.growth
    }

    pub fn drivers(&self) -> Drivers {
        self.drivers
    }

    #[inline]
    pub fn eval(&self, w1: T, w2: T) -> T {
        (self.payoff)(w1, w2)
    }

    /// Whether `E[e^{16|ξ|}] < ∞` holds for the declared growth class on `[0, horizon]`.
    ///
    /// A quadratic bound `c·(w₁² + w₂²)` needs `32·c·T < 1`.
    pub fn within_wellposedness_regime(&self, horizon: f64) -> bool {
        match self.growth {
            GrowthTag::Bounded | GrowthTag::Linear => true,
            GrowthTag::Quadratic { coefficient } => 32.0 * coefficient * horizon < 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LatticeOptions {
    /// Keep every layer of `Y`, `Z₁`, `Z₂`. Memory grows like `N³/3`.
    pub record_surfaces: bool,
    /// Accumulate `E Σ Z_i²Δt` and the cross-variance term along the recursion.
    pub accumulate_energy: bool,
}

/// Node values of every time layer; layer `k` is row-major `(k+1)×(k+1)`
/// indexed by `(i, j)`. `Z` layers stop at step `N − 1`.
#[derive(Debug, Clone)]
pub struct LatticeSurfaces<T> {
    pub y: Vec<Vec<T>>,
    pub z1: Vec<Vec<T>>,
    pub z2: Vec<Vec<T>>,
}

/// Lattice expectations of the quadratic variation carried by each driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriverEnergy<T> {
    /// `E Σ Z_i²Δt`.
    pub first_order: [T; 2],
    /// `E Σ c²` where `c` is the `e₁e₂` coefficient of the one-step increment.
    pub cross: T,
}

impl<T: Real> DriverEnergy<T> {
    /// Variance components with the cross term shared equally between drivers.
    pub fn decomposition(&self) -> [T; 2] {
        let half = self.cross * T::lit(0.5);
        [self.first_order[0] + half, self.first_order[1] + half]
    }
}

#[derive(Debug, Clone)]
pub struct LatticeSolution<T: Real> {
    pub y0: T,
    pub z1_0: T,
    pub z2_0: T,
    pub steps: usize,
    pub horizon: T,
    pub gamma: [T; 2],
    /// Largest `γ_i·Z_i²·Δt` encountered; above [`STABILITY_LIMIT`] the explicit scheme is unreliable.
    pub max_driver_increment: T,
    pub within_regime: bool,
    pub energy: Option<DriverEnergy<T>>,
    pub surfaces: Option<LatticeSurfaces<T>>,
}

impl<T: Real> LatticeSolution<T> {
    pub fn nodes_per_axis(&self) -> usize {
        self.steps + 1
    }

    pub fn stability_warning(&self) -> bool {
        self.max_driver_increment > T::lit(STABILITY_LIMIT)
    }
}

fn terminal_layer<T: Real>(xi: &Payoff<T>, grid: &TimeGrid<T>) -> Result<Vec<T>> {
    let n = grid.steps();
    let s = grid.dt().sqrt();
    let w: Vec<T> = (0..=n)
        .map(|i| T::from_usize_lossy(2 * i) * s - T::from_usize_lossy(n) * s)
        .collect();
    let mut out = Vec::with_capacity((n + 1) * (n + 1));
    for &w1 in &w {
        for &w2 in &w {
            let v = xi.eval(w1, w2);
            if !v.finite() {
                return Err(Error::NonFinitePayoff { w1: w1.as_f64(), w2: w2.as_f64() });
            }
            out.push(v);
        }
    }
    Ok(out)
}

pub fn lattice_solve<T: Real>(
    xi: &Payoff<T>,
    gamma1: T,
    gamma2: T,
    grid: &TimeGrid<T>,
) -> Result<LatticeSolution<T>> {
    lattice_solve_with(xi, gamma1, gamma2, grid, LatticeOptions::default())
}

/// Explicit backward recursion: per node `Z_i = E[Y⁺ΔW_i]/Δt` over the four
/// children, then `Y = E[Y⁺] + (γ₁Z₁² + γ₂Z₂²)Δt`.
pub fn lattice_solve_with<T: Real>(
    xi: &Payoff<T>,
    gamma1: T,
    gamma2: T,
    grid: &TimeGrid<T>,
    opts: LatticeOptions,
) -> Result<LatticeSolution<T>> {
    if gamma1 < T::zero() || gamma2 < T::zero() || !gamma1.finite() || !gamma2.finite() {
        return Err(Error::Precondition(format!(
            "risk sensitivities must be nonnegative, got ({gamma1}, {gamma2})"
        )));
    }
    let n = grid.steps();
    if n < 2 {
        return Err(Error::Grid(format!("lattice needs at least 2 steps, got {n}")));
    }
    let dt = grid.dt();
    let s = dt.sqrt();
    let quarter = T::lit(0.25);
    let inv4s = T::one() / (T::lit(4.0) * s);
    let limit = T::lit(OVERFLOW_LIMIT);

    let mut y = terminal_layer(xi, grid)?;
    let mut e1 = vec![T::zero(); if opts.accumulate_energy { y.len() } else { 0 }];
    let mut e2 = e1.clone();
    let mut ec = e1.clone();
    let mut surfaces = opts.record_surfaces.then(|| LatticeSurfaces {
        y: vec![Vec::new(); n + 1],
        z1: vec![Vec::new(); n],
        z2: vec![Vec::new(); n],
    });
    if let Some(sf) = surfaces.as_mut() {
        sf.y[n] = y.clone();
    }

    let mut max_inc = T::zero();
    let (mut z1_root, mut z2_root) = (T::zero(), T::zero());
    for k in (0..n).rev() {
        let w = k + 1; // child layer width
        let m = k + 1; // current layer width
        let mut next = vec![T::zero(); m * m];
        let mut n1 = vec![T::zero(); if opts.accumulate_energy { m * m } else { 0 }];
        let mut n2 = n1.clone();
        let mut nc = n1.clone();
        let mut zl1 = if opts.record_surfaces { vec![T::zero(); m * m] } else { Vec::new() };
        let mut zl2 = zl1.clone();
        for i in 0..m {
            for j in 0..m {
                let mm = i * (w + 1) + j;
                let mp = mm + 1;
                let pm = mm + w + 1;
                let pp = pm + 1;
                let (ypp, ypm, ymp, ymm) = (y[pp], y[pm], y[mp], y[mm]);
                let z1 = (ypp + ypm - ymp - ymm) * inv4s;
                let z2 = (ypp - ypm + ymp - ymm) * inv4s;
                let mean = (ypp + ypm + ymp + ymm) * quarter;
                let inc1 = gamma1 * z1 * z1 * dt;
                let inc2 = gamma2 * z2 * z2 * dt;
                max_inc = max_inc.max(inc1).max(inc2);
                let v = mean + inc1 + inc2;
                if !v.finite() || v.abs() > limit {
                    return Err(Error::Overflow { step: k, i, j });
                }
                let idx = i * m + j;
                next[idx] = v;
                if opts.accumulate_energy {
                    let c = (ypp - ypm - ymp + ymm) * quarter;
                    n1[idx] = (e1[pp] + e1[pm] + e1[mp] + e1[mm]) * quarter + z1 * z1 * dt;
                    n2[idx] = (e2[pp] + e2[pm] + e2[mp] + e2[mm]) * quarter + z2 * z2 * dt;
                    nc[idx] = (ec[pp] + ec[pm] + ec[mp] + ec[mm]) * quarter + c * c;
                }
                if opts.record_surfaces {
                    zl1[idx] = z1;
                    zl2[idx] = z2;
                }
                if k == 0 {
                    z1_root = z1;
                    z2_root = z2;
                }
            }
        }
        y = next;
        if opts.accumulate_energy {
            e1 = n1;
            e2 = n2;
            ec = nc;
        }
        if let Some(sf) = surfaces.as_mut() {
            sf.y[k] = y.clone();
            sf.z1[k] = zl1;
            sf.z2[k] = zl2;
        }
    }

    Ok(LatticeSolution {
        y0: y[0],
        z1_0: z1_root,
        z2_0: z2_root,
        steps: n,
        horizon: grid.horizon(),
        gamma: [gamma1, gamma2],
        max_driver_increment: max_inc,
        within_regime: xi.within_wellposedness_regime(grid.horizon().as_f64()),
        energy: opts.accumulate_energy.then(|| DriverEnergy { first_order: [e1[0], e2[0]], cross: ec[0] }),
        surfaces,
    })
}

/// `ln C(n, i) − n ln 2` for `i = 0..=n`.
fn log_binomial_weights(n: usize) -> Vec<f64> {
    let mut log_fact = vec![0.0f64; n + 1];
    for k in 1..=n {
        log_fact[k] = log_fact[k - 1] + (k as f64).ln();
    }
    let ln2n = n as f64 * std::f64::consts::LN_2;
    (0..=n).map(|i| log_fact[n] - log_fact[i] - log_fact[n - i] - ln2n).collect()
}

/// Terminal nodes with their log-probabilities under the lattice measure.
fn terminal_distribution<T: Real>(
    xi: &Payoff<T>,
    grid: &TimeGrid<T>,
) -> Result<Vec<(f64, f64)>> {
    let n = grid.steps();
    let values = terminal_layer(xi, grid)?;
    let lw = log_binomial_weights(n);
    let mut out = Vec::with_capacity(values.len());
    for i in 0..=n {
        for j in 0..=n {
            out.push((lw[i] + lw[j], values[i * (n + 1) + j].as_f64()));
        }
    }
    Ok(out)
}

/// `(1/θ) log E[e^{θξ}]` by direct summation over the terminal lattice
/// distribution, computed with a log-sum-exp shift.
pub fn lattice_solve_symmetric_reference<T: Real>(
    xi: &Payoff<T>,
    theta: T,
    grid: &TimeGrid<T>,
) -> Result<T> {
    if !(theta > T::zero()) {
        return Err(Error::Precondition(format!("theta must be positive, got {theta}")));
    }
    let th = theta.as_f64();
    let terms: Vec<f64> = terminal_distribution(xi, grid)?
        .into_iter()
        .map(|(lw, v)| lw + th * v)
        .collect();
    let shift = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - shift).exp()).sum();
    Ok(T::lit((shift + sum.ln()) / th))
}

/// Mean and variance of `ξ` under the terminal lattice distribution.
pub fn lattice_moments<T: Real>(xi: &Payoff<T>, grid: &TimeGrid<T>) -> Result<(T, T)> {
    let dist = terminal_distribution(xi, grid)?;
    let mean: f64 = dist.iter().map(|(lw, v)| lw.exp() * v).sum();
    let var: f64 = dist.iter().map(|(lw, v)| lw.exp() * (v - mean) * (v - mean)).sum();
    Ok((T::lit(mean), T::lit(var)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Exact,
    FinestLattice,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub steps: usize,
    pub y0: f64,
    pub error: f64,
    /// `|y0(N) − y0(previous N)|`.
    pub increment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub reference: f64,
    pub reference_kind: ReferenceKind,
    pub rows: Vec<ConvergenceRow>,
    /// Order estimated from the last two nonzero errors.
    pub empirical_order: Option<f64>,
}

/// Errors of the lattice value against `reference` (or the finest step count
/// when none is given) for each step count.
pub fn convergence_probe<T: Real>(
    xi: &Payoff<T>,
    gamma1: T,
    gamma2: T,
    horizon: T,
    step_counts: &[usize],
    reference: Option<T>,
) -> Result<ConvergenceTable> {
    if step_counts.is_empty() {
        return Err(Error::Precondition("no step counts given".into()));
    }
    let mut values = Vec::with_capacity(step_counts.len());
    for &n in step_counts {
        let grid = TimeGrid::new(horizon, n)?;
        values.push(lattice_solve(xi, gamma1, gamma2, &grid)?.y0.as_f64());
    }
    let (reference, reference_kind) = match reference {
        Some(r) => (r.as_f64(), ReferenceKind::Exact),
        None => {
            let finest = (0..step_counts.len()).max_by_key(|&k| step_counts[k]).unwrap_or(0);
            (values[finest], ReferenceKind::FinestLattice)
        }
    };
    let rows: Vec<ConvergenceRow> = step_counts
        .iter()
        .zip(&values)
        .enumerate()
        .map(|(k, (&steps, &y0))| ConvergenceRow {
            steps,
            y0,
            error: (y0 - reference).abs(),
            increment: (k > 0).then(|| (y0 - values[k - 1]).abs()),
        })
        .collect();
    let usable: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.error > 0.0).collect();
    let empirical_order = match usable.as_slice() {
        [.., a, b] if a.steps != b.steps => {
            Some((a.error / b.error).ln() / (b.steps as f64 / a.steps as f64).ln())
        }
        _ => None,
    };
    Ok(ConvergenceTable { reference, reference_kind, rows, empirical_order })
}
