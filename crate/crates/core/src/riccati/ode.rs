//! Fixed-step fourth-order Runge–Kutta integration backward in time.

use nalgebra::{DMatrix, DVector};

use crate::grid::TimeGrid;
use crate::scalar::Real;

/// State of a deterministic ODE integrated by [`rk4_backward`].
pub trait OdeState<T: Real>: Clone {
    /// `self + h·k`.
    fn add_scaled(&self, k: &Self, h: T) -> Self;
    /// Norm used by the blow-up guard.
    fn guard_norm(&self) -> T;
}

impl<T: Real> OdeState<T> for DMatrix<T> {
    fn add_scaled(&self, k: &Self, h: T) -> Self {
        self + k * h
    }
    fn guard_norm(&self) -> T {
        self.norm()
    }
}

impl<T: Real> OdeState<T> for DVector<T> {
    fn add_scaled(&self, k: &Self, h: T) -> Self {
        self + k * h
    }
    fn guard_norm(&self) -> T {
        self.norm()
    }
}

impl<T: Real> OdeState<T> for T {
    fn add_scaled(&self, k: &Self, h: T) -> Self {
        *self + *k * h
    }
    fn guard_norm(&self) -> T {
        self.abs()
    }
}

/// Coupled states; only the first component is watched by the guard.
impl<T: Real, A: OdeState<T>, B: OdeState<T>> OdeState<T> for (A, B) {
    fn add_scaled(&self, k: &Self, h: T) -> Self {
        (self.0.add_scaled(&k.0, h), self.1.add_scaled(&k.1, h))
    }
    fn guard_norm(&self) -> T {
        self.0.guard_norm()
    }
}

#[derive(Debug, Clone)]
pub struct OdeRun<T, S> {
    /// One state per grid node; nodes before `valid_from` repeat the last
    /// computed state when the guard fired.
    pub values: Vec<S>,
    pub valid_from: usize,
    pub max_norm: T,
    /// `(node index, norm)` at which the guard fired.
    pub blowup: Option<(usize, T)>,
}

/// Integrates `dy/dt = rhs(t, y)` from `y(T) = terminal` back to `t = 0`.
///
/// `post` runs on every accepted state (symmetrization hook). Integration
/// stops when the guard norm exceeds `threshold` or becomes non-finite.
pub fn rk4_backward<T, S, F, P>(
    grid: &TimeGrid<T>,
    terminal: S,
    rhs: F,
    post: P,
    threshold: T,
) -> OdeRun<T, S>
where
    T: Real,
    S: OdeState<T>,
    F: Fn(T, &S) -> S,
    P: Fn(&mut S),
{
    let n = grid.steps();
    let h = -grid.dt();
    let half = h * T::lit(0.5);
    let sixth = h / T::lit(6.0);
    let third = h / T::lit(3.0);

    let mut values: Vec<Option<S>> = vec![None; n + 1];
    let mut y = terminal;
    post(&mut y);
    let mut max_norm = y.guard_norm();
    values[n] = Some(y.clone());
    let mut blowup = None;
    let mut valid_from = 0;

    for i in (0..n).rev() {
        let t = grid.time(i + 1);
        let tm = t + half;
        let k1 = rhs(t, &y);
        let k2 = rhs(tm, &y.add_scaled(&k1, half));
        let k3 = rhs(tm, &y.add_scaled(&k2, half));
        let k4 = rhs(grid.time(i), &y.add_scaled(&k3, h));
        let mut next = y
            .add_scaled(&k1, sixth)
            .add_scaled(&k2, third)
            .add_scaled(&k3, third)
            .add_scaled(&k4, sixth);
        post(&mut next);
        let norm = next.guard_norm();
        if !norm.finite() || norm > threshold {
            blowup = Some((i, norm));
            valid_from = i + 1;
            break;
        }
        max_norm = max_norm.max(norm);
        y = next;
        values[i] = Some(y.clone());
    }

    let last = values[valid_from].clone().expect("computed state");
    let values = values.into_iter().map(|v| v.unwrap_or_else(|| last.clone())).collect();
    OdeRun {
        values,
        valid_from,
        max_norm,
        blowup,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_fourth_order() {
        // dy/dt = y, y(1) = 1  =>  y(0) = e^{-1}
        let err = |n: usize| {
            let g = TimeGrid::new(1.0, n).unwrap();
            let run = rk4_backward(&g, 1.0f64, |_, y: &f64| *y, |_| {}, 1e9);
            (run.values[0] - (-1.0f64).exp()).abs()
        };
        let r = err(10) / err(20);
        assert!((14.0..18.0).contains(&r), "ratio {r}");
    }

    #[test]
    fn guard_stops_blowup() {
        // dy/dt = -y², y(1) = 1  =>  y(t) = 1/(t) blows up at t = 0
        let g = TimeGrid::new(1.0, 1000).unwrap();
        let run = rk4_backward(&g, 1.0f64, |_, y: &f64| -y * y, |_| {}, 1e3);
        assert!(run.blowup.is_some());
        assert!(run.valid_from > 0);
        assert!(run.values.iter().all(|v| v.is_finite()));
    }
}
